use thiserror::Error;

/// Errors raised by the simulation kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The postselected state is orthogonal to the preselected one, so the
    /// weak value has a vanishing denominator.
    #[error("postselected state has zero overlap with the preselected state")]
    ZeroOverlap,

    #[error("state has numerically zero norm")]
    ZeroNorm,

    #[error("grid spacing {spacing} exceeds the limit {limit}")]
    GridTooCoarse { spacing: f64, limit: f64 },

    /// Field point sits on the trajectory of a subluminal charge.
    #[error("field point lies on the worldline of the charge")]
    OnWorldline,

    /// Superluminal source, field point outside the wake.
    #[error("potential is undefined outside the Mach wake")]
    UndefinedRegion,

    #[error("speed {0} is not superluminal")]
    SubluminalInput(f64),

    #[error("split-step kick did not converge: doubling to {substeps} substeps changed the state by {change:e}")]
    SplitStepUnconverged { substeps: usize, change: f64 },

    /// A fixed-precision path was asked to resolve a sum that cancels below
    /// its working precision.
    #[error("sector sum cancels by about 10^{digits:.0}, beyond double precision")]
    Cancellation { digits: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
