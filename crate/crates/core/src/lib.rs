pub mod coin;
pub mod coupling;
pub mod ensemble_stats;
pub mod fields;
pub mod error;
pub(crate) mod mp;
pub mod rng;
pub mod wavepacket;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/weak-values.md")]
    pub mod weak_values {}
    #[doc = include_str!("../../../book/src/postselected-evolution.md")]
    pub mod postselected_evolution {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    pub mod statistics {}
    #[doc = include_str!("../../../book/src/fields.md")]
    pub mod fields {}
    #[doc = include_str!("../../../book/src/kick-experiment.md")]
    pub mod kick_experiment {}
    #[doc = include_str!("../../../book/src/causality.md")]
    pub mod causality {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    pub mod command_line {}
}
