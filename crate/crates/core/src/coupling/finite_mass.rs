//! Kick with a finite test-particle mass.
//!
//! Along the 2D grid the vector potential depends on `z'` only, so
//! `(p' - q'A)^2 = U p'^2 U^dagger` with `U = e^{i Lambda(z')}`, `Lambda' = q' A`.
//! The kick `e^{-i[(p' - q'A)^2/2m + q'V]}` is therefore applied as
//! `U e^{-i[p'^2/2m + q'V]} U^dagger`, the inner exponential by symmetric
//! splitting (half kinetic, potential, half kinetic) repeated over `s`
//! substeps. The splitting error is second order in the commutator `[p'^2, V]/s`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::fields::FieldMode;

/// `int V/q dz'` as a function of `Delta = z' - z`: any antiderivative of the
/// potential profile of a unit charge moving at `v`, constant outside its support.
pub(crate) fn potential_antiderivative(v: f64, rho: f64, delta: f64, mode: FieldMode) -> f64 {
    let c = rho * rho * (1.0 - v * v);
    let behind = v * delta < 0.0;
    if c > 0.0 {
        return (delta / c.sqrt()).asinh();
    }
    let luminal = c == 0.0;
    let (support, factor) = match mode {
        FieldMode::ClosedForm => (true, 1.0),
        // Two retarded roots in the wake, none ahead of the charge.
        FieldMode::RetardedSum => (behind, if luminal { 1.0 } else { 2.0 }),
    };
    if !support || delta == 0.0 {
        return 0.0;
    }
    if luminal {
        return factor * delta.signum() * delta.abs().ln();
    }
    let a = (-c).sqrt();
    if delta.abs() <= a {
        0.0
    } else {
        factor * delta.signum() * (delta.abs() / a).acosh()
    }
}

/// Shared FFT plans and kinetic phases for rows of length `len`.
pub(crate) struct SplitStep {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    half_kinetic: Vec<Complex64>,
    substeps: usize,
}

impl SplitStep {
    pub(crate) fn new(len: usize, spacing: f64, mass: f64, substeps: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let dp = 2.0 * PI / (len as f64 * spacing);
        let dt = 1.0 / substeps as f64;
        let half_kinetic = (0..len)
            .map(|k| {
                let kk = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
                let p = kk * dp;
                Complex64::from_polar(1.0 / len as f64, -0.25 * p * p / mass * dt)
            })
            .collect();
        Self { fwd, inv, half_kinetic, substeps }
    }

    fn half_kick_kinetic(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
        for (x, k) in buf.iter_mut().zip(&self.half_kinetic) {
            *x *= k;
        }
        self.inv.process(buf);
    }

    /// Applies `U e^{-i[p^2/2m + phi]} U^dagger` to `psi` in place, where
    /// `phi = q'V` and `gauge = Lambda` are sampled on the row.
    pub(crate) fn apply(&self, psi: &mut [Complex64], phi: &[f64], gauge: &[f64]) {
        for (x, g) in psi.iter_mut().zip(gauge) {
            *x *= Complex64::from_polar(1.0, -g);
        }
        let dt = 1.0 / self.substeps as f64;
        let pot: Vec<Complex64> = phi.iter().map(|p| Complex64::from_polar(1.0, -p * dt)).collect();
        for _ in 0..self.substeps {
            self.half_kick_kinetic(psi);
            for (x, p) in psi.iter_mut().zip(&pot) {
                *x *= p;
            }
            self.half_kick_kinetic(psi);
        }
        for (x, g) in psi.iter_mut().zip(gauge) {
            *x *= Complex64::from_polar(1.0, *g);
        }
    }
}
