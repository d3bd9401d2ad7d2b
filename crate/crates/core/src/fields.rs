//! Scalar and vector potentials of a point charge moving along `z` at speed
//! `v` (any real, superluminal included), both from the boosted Coulomb
//! closed form and from the retarded-time root sum.
//!
//! The charge sits at `z = v tau` at time `tau`; field points are
//! `(x', y', z')` at time `t`, with `rho^2 = x'^2 + y'^2`.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Below this radicand a subluminal field point counts as on the worldline.
pub const WORLDLINE_RADICAND: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub q: f64,
    pub v: f64,
    pub t: f64,
}

impl SourceSpec {
    pub fn new(q: f64, v: f64, t: f64) -> Result<Self> {
        if !q.is_finite() || !v.is_finite() || !t.is_finite() {
            return Err(Error::InvalidParameter("source parameters must be finite".into()));
        }
        Ok(Self { q, v, t })
    }
}

fn rho2(x: [f64; 3]) -> f64 {
    x[0] * x[0] + x[1] * x[1]
}

/// `rho^2 (1 - v^2) + (z' - v t)^2`.
#[must_use]
pub fn radicand(src: &SourceSpec, x: [f64; 3]) -> f64 {
    let zeta = x[2] - src.v * src.t;
    rho2(x) * (1.0 - src.v * src.v) + zeta * zeta
}

/// `q / sqrt(rho^2 (1 - v^2) + (z' - v t)^2)`.
pub fn scalar_potential_closed(src: &SourceSpec, x: [f64; 3]) -> Result<f64> {
    let r = radicand(src, x);
    if src.v.abs() < 1.0 {
        if r < WORLDLINE_RADICAND {
            return Err(Error::OnWorldline);
        }
    } else if !(r > 0.0) {
        if src.v.abs() == 1.0 && r == 0.0 && rho2(x) == 0.0 {
            return Err(Error::OnWorldline);
        }
        return Err(Error::UndefinedRegion);
    }
    Ok(src.q / r.sqrt())
}

/// `g(tau) = t - tau - |x' - x(tau)|`; zero at retarded times.
#[must_use]
pub fn retardation_residual(src: &SourceSpec, x: [f64; 3], tau: f64) -> f64 {
    let dz = x[2] - src.v * tau;
    src.t - tau - (rho2(x) + dz * dz).sqrt()
}

/// Lags `s = t - tau >= 0` solving `(1 - v^2) s^2 - 2 v zeta s - (rho^2 + zeta^2) = 0`,
/// `zeta = z' - v t`, in ascending order. Each quadratic root is taken in the
/// cancellation-free form.
fn lags(src: &SourceSpec, x: [f64; 3]) -> Vec<f64> {
    let v = src.v;
    let zeta = x[2] - v * src.t;
    let c = rho2(x) + zeta * zeta;
    if c == 0.0 {
        return vec![];
    }
    let vz = v * zeta;
    let a = 1.0 - v * v;
    if v.abs() == 1.0 {
        // -2 v zeta s = rho^2 + zeta^2
        return if vz < 0.0 { vec![c / (-2.0 * vz)] } else { vec![] };
    }
    let r = radicand(src, x);
    if a > 0.0 {
        let sq = r.sqrt();
        let s = if vz >= 0.0 { (vz + sq) / a } else { c / (sq - vz) };
        vec![s]
    } else {
        if !(r > 0.0) || vz >= 0.0 {
            return vec![];
        }
        let sq = r.sqrt();
        let far = (-vz + sq) / (-a);
        let near = c / ((-a) * far);
        vec![near, far]
    }
}

/// Retarded times `tau <= t` with `(t - tau)^2 = rho^2 + (z' - v tau)^2`:
/// one for `|v| < 1`, zero or two for `|v| > 1`, at most one at `|v| = 1`.
/// Sorted latest first.
pub fn retarded_roots(src: &SourceSpec, x: [f64; 3]) -> Result<Vec<f64>> {
    if src.v.abs() < 1.0 && radicand(src, x) < WORLDLINE_RADICAND {
        return Err(Error::OnWorldline);
    }
    Ok(lags(src, x).into_iter().map(|s| src.t - s).collect())
}

/// `q sum_i 1 / (|x' - x(tau_i)| |g'(tau_i)|)` over the retarded roots.
///
/// At a root `|x' - x(tau)| = s` and `s |g'| = |(v^2 - 1) s + v zeta|`, which
/// equals `sqrt(radicand)` for every root.
pub fn lienard_wiechert(src: &SourceSpec, x: [f64; 3]) -> Result<f64> {
    if src.v.abs() < 1.0 && radicand(src, x) < WORLDLINE_RADICAND {
        return Err(Error::OnWorldline);
    }
    let v = src.v;
    let zeta = x[2] - v * src.t;
    Ok(lags(src, x)
        .into_iter()
        .map(|s| src.q / ((v * v - 1.0) * s + v * zeta).abs())
        .sum())
}

/// `q / |(v^2 - 1) s + v zeta|` summed with `|g'|` taken from its definition,
/// `g'(tau) = -1 + v (z' - v tau) / |x' - x(tau)|`, instead of the closed
/// simplification. Used as an independent check.
#[must_use]
pub fn lienard_wiechert_from_derivative(src: &SourceSpec, x: [f64; 3], taus: &[f64]) -> f64 {
    taus.iter()
        .map(|&tau| {
            let dz = x[2] - src.v * tau;
            let r = (rho2(x) + dz * dz).sqrt();
            let gp = -1.0 + src.v * dz / r;
            src.q / (r * gp.abs())
        })
        .sum()
}

/// Half-angle in degrees of the support cone, `atan(1/sqrt(v^2 - 1))`.
pub fn mach_cone_half_angle(v: f64) -> Result<f64> {
    if !(v.abs() > 1.0) {
        return Err(Error::SubluminalInput(v));
    }
    Ok((1.0 / (v * v - 1.0).sqrt()).atan().to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldMode {
    /// Boosted Coulomb form, zero where the radicand is not positive.
    ClosedForm,
    /// Sum over retarded roots with `tau <= t`.
    #[default]
    RetardedSum,
}

impl FieldMode {
    pub fn name(&self) -> &'static str {
        match self {
            FieldMode::ClosedForm => "closed_form",
            FieldMode::RetardedSum => "retarded_sum",
        }
    }
}

impl std::str::FromStr for FieldMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form" => Ok(FieldMode::ClosedForm),
            "retarded_sum" => Ok(FieldMode::RetardedSum),
            _ => Err(Error::InvalidParameter(format!("unknown field mode {s:?}"))),
        }
    }
}

/// Why a sample carries no value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFlag {
    Defined,
    OnWorldline,
    /// Outside the support of the chosen mode (superluminal source).
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSample {
    pub position: [f64; 3],
    pub v: f64,
    pub a_z: f64,
    pub n_retarded_roots: usize,
    pub flag: SampleFlag,
}

impl PotentialSample {
    pub fn defined(&self) -> bool {
        self.flag == SampleFlag::Defined
    }
}

/// Rectangle in the `(rho, z)` half plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub rho_min: f64,
    pub rho_max: f64,
    pub n_rho: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub n_z: usize,
}

impl GridSpec {
    pub fn new(rho: (f64, f64), n_rho: usize, z: (f64, f64), n_z: usize) -> Result<Self> {
        let g = Self { rho_min: rho.0, rho_max: rho.1, n_rho, z_min: z.0, z_max: z.1, n_z };
        if n_rho < 2 || n_z < 2 || !(g.d_rho() > 0.0) || !(g.d_z() > 0.0) || rho.0 < 0.0 {
            return Err(Error::InvalidParameter(
                "grid needs at least 2x2 points, positive spacings and rho >= 0".into(),
            ));
        }
        Ok(g)
    }

    pub fn d_rho(&self) -> f64 {
        (self.rho_max - self.rho_min) / (self.n_rho - 1) as f64
    }

    pub fn d_z(&self) -> f64 {
        (self.z_max - self.z_min) / (self.n_z - 1) as f64
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.rho_min + self.d_rho() * i as f64
    }

    pub fn z(&self, j: usize) -> f64 {
        self.z_min + self.d_z() * j as f64
    }
}

/// Potentials sampled on a grid, row-major in `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub source: SourceSpec,
    pub grid: GridSpec,
    pub mode: FieldMode,
    pub samples: Vec<PotentialSample>,
}

/// Single sample in the given mode; errors become flags.
#[must_use]
pub fn sample(src: &SourceSpec, x: [f64; 3], mode: FieldMode, worldline_tol: f64) -> PotentialSample {
    let zeta = x[2] - src.v * src.t;
    let near_line = rho2(x).sqrt() <= worldline_tol && zeta.abs() <= worldline_tol;
    let n_roots = if near_line { 0 } else { lags(src, x).len() };
    let value = if near_line && src.v.abs() <= 1.0 {
        Err(Error::OnWorldline)
    } else {
        match mode {
            FieldMode::ClosedForm => scalar_potential_closed(src, x),
            FieldMode::RetardedSum => {
                if n_roots == 0 {
                    Err(Error::UndefinedRegion)
                } else {
                    lienard_wiechert(src, x)
                }
            }
        }
    };
    let (v, flag) = match value {
        Ok(v) if v.is_finite() => (v, SampleFlag::Defined),
        Ok(_) | Err(Error::OnWorldline) => (0.0, SampleFlag::OnWorldline),
        Err(_) => (0.0, SampleFlag::Undefined),
    };
    PotentialSample { position: x, v, a_z: src.v * v, n_retarded_roots: n_roots, flag }
}

/// Samples `V` and `A_z = v V` over the grid, in parallel over rows.
/// Points within `1e-6` grid units of the charge are flagged, not clamped.
#[must_use]
pub fn field_map(src: &SourceSpec, grid: &GridSpec, mode: FieldMode) -> FieldMap {
    let tol = 1e-6 * grid.d_rho().min(grid.d_z());
    let samples = (0..grid.n_rho)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rho = grid.rho(i);
            (0..grid.n_z).map(move |j| sample(src, [rho, 0.0, grid.z(j)], mode, tol))
        })
        .collect();
    FieldMap { source: *src, grid: *grid, mode, samples }
}

impl FieldMap {
    pub fn at(&self, i: usize, j: usize) -> &PotentialSample {
        &self.samples[i * self.grid.n_z + j]
    }

    /// For each `rho` row, the boundary of the wake behind the charge: the
    /// midpoint between the last `z` cell with two roots (scanning towards
    /// the charge) and the next cell. `None` for rows without a wake cell.
    #[must_use]
    pub fn wake_boundary(&self) -> Vec<Option<f64>> {
        let apex = self.source.v * self.source.t;
        (0..self.grid.n_rho)
            .map(|i| {
                let mut last = None;
                for j in 0..self.grid.n_z {
                    let s = self.at(i, j);
                    let z = self.grid.z(j);
                    if (z - apex) * self.source.v.signum() >= 0.0 {
                        break;
                    }
                    if s.n_retarded_roots == 2 {
                        last = Some(j);
                    }
                }
                last.filter(|&j| j + 1 < self.grid.n_z)
                    .map(|j| 0.5 * (self.grid.z(j) + self.grid.z(j + 1)))
            })
            .collect()
    }

    /// Half-angle in degrees fitted to [`wake_boundary`](Self::wake_boundary):
    /// least squares of `|z_b - v t| = k rho` through the apex.
    #[must_use]
    pub fn fitted_half_angle(&self) -> Option<f64> {
        let apex = self.source.v * self.source.t;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, b) in self.wake_boundary().iter().enumerate() {
            if let Some(z) = b {
                let rho = self.grid.rho(i);
                sxy += rho * (z - apex).abs();
                sxx += rho * rho;
            }
        }
        if sxx == 0.0 {
            return None;
        }
        Some((1.0 / (sxy / sxx)).atan().to_degrees())
    }

    /// CSV with columns `rho,z,V,A_z,n_roots,defined_flag`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "rho,z,V,A_z,n_roots,defined_flag")?;
        for s in &self.samples {
            writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
                s.position[0],
                s.position[2],
                s.v,
                s.a_z,
                s.n_retarded_roots,
                u8::from(s.defined())
            )?;
        }
        Ok(())
    }

    /// Gnuplot script drawing `V` as a heat map from `csv_name`.
    pub fn write_gnuplot<W: Write>(&self, mut out: W, csv_name: &str, png_name: &str) -> io::Result<()> {
        writeln!(out, "set datafile separator ','")?;
        writeln!(out, "set terminal pngcairo size 900,700")?;
        writeln!(out, "set output '{png_name}'")?;
        writeln!(out, "set xlabel 'z'")?;
        writeln!(out, "set ylabel 'rho'")?;
        writeln!(
            out,
            "set title 'V for q = {}, v = {}, t = {} ({})'",
            self.source.q,
            self.source.v,
            self.source.t,
            self.mode.name()
        )?;
        writeln!(out, "set view map")?;
        writeln!(out, "set cbrange [0:*]")?;
        writeln!(out, "set logscale cb")?;
        writeln!(out, "splot '{csv_name}' every ::1 using 2:1:($6 > 0 ? $3 : 1/0) with image notitle")?;
        Ok(())
    }
}
