//! Charge and test particle: the kick experiment on a `(z, z')` grid, the
//! moment-replacement table and the causality inequalities.
//!
//! The moving charge (packet `Phi`, charge `q`) has been postselected at time
//! `T`; a test particle (packet `Omega`, charge `q'`) then receives an
//! instantaneous kick from its potentials. Transverse coordinates are frozen
//! at fixed offsets `(dx, dy)` between the two particles.

mod exact;
mod finite_mass;

use std::io::{self, Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::coin::{self, CoinState};
use crate::error::{Error, Result};
use crate::fields::{self, FieldMode, SampleFlag, SourceSpec};
use crate::wavepacket::{gauss, GaussianPacket};

pub use exact::ExactMethod;

/// Digits a double-precision sector sum may lose before it is refused.
pub const MAX_CANCELLATION_DIGITS: f64 = 8.0;

/// Substep change above which a split-step kick counts as unconverged.
pub const SPLIT_STEP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mass {
    /// Scalar kick only; the kinetic and vector-potential terms drop out.
    Infinite,
    Finite(f64),
}

/// The test particle: charge `q'`, mass and packet `Omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestParticleSpec {
    pub charge: f64,
    pub mass: Mass,
    pub packet: GaussianPacket,
}

impl TestParticleSpec {
    pub fn new(charge: f64, mass: Mass, packet: GaussianPacket) -> Result<Self> {
        if !charge.is_finite() {
            return Err(Error::InvalidParameter("test charge must be finite".into()));
        }
        if let Mass::Finite(m) = mass {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::InvalidParameter(format!("mass must be positive, got {m}")));
            }
        }
        Ok(Self { charge, mass, packet })
    }

    fn omega(&self, zp: f64) -> Complex64 {
        self.packet.amplitude() * gauss(zp - self.packet.center()[2], self.packet.width())
    }
}

/// The moving charge: its value `q` and its packet `Phi` before evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingCharge {
    pub q: f64,
    pub packet: GaussianPacket,
}

impl MovingCharge {
    pub fn new(q: f64, packet: GaussianPacket) -> Result<Self> {
        if !q.is_finite() {
            return Err(Error::InvalidParameter("charge must be finite".into()));
        }
        Ok(Self { q, packet })
    }

    fn center(&self) -> f64 {
        self.packet.center()[2]
    }

    fn width(&self) -> f64 {
        self.packet.width()
    }
}

/// Square `(z, z')` grid: `z_i = z0 + i h`, `z'_j = zp0 + j h`, with the
/// transverse offset `(dx, dy)` of the test particle from the charge.
///
/// One spacing serves both axes so that `z' - z` takes only `nz + nzp - 1`
/// distinct values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointGrid {
    pub z0: f64,
    pub zp0: f64,
    pub spacing: f64,
    pub nz: usize,
    pub nzp: usize,
    pub dx: f64,
    pub dy: f64,
}

impl JointGrid {
    pub fn new(z0: f64, zp0: f64, spacing: f64, nz: usize, nzp: usize, dx: f64, dy: f64) -> Result<Self> {
        if nz < 2 || nzp < 2 || !(spacing > 0.0) {
            return Err(Error::InvalidParameter("joint grid needs 2x2 points and a positive spacing".into()));
        }
        if ![z0, zp0, spacing, dx, dy].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("joint grid parameters must be finite".into()));
        }
        Ok(Self { z0, zp0, spacing, nz, nzp, dx, dy })
    }

    /// Smallest common spacing covering both intervals with the given point
    /// counts; each axis is centred on its interval.
    pub fn covering(z: (f64, f64), zp: (f64, f64), nz: usize, nzp: usize, dx: f64, dy: f64) -> Result<Self> {
        if nz < 2 || nzp < 2 || !(z.1 > z.0) || !(zp.1 > zp.0) {
            return Err(Error::InvalidParameter("covering needs increasing intervals and 2x2 points".into()));
        }
        let h = ((z.1 - z.0) / (nz - 1) as f64).max((zp.1 - zp.0) / (nzp - 1) as f64);
        let z0 = 0.5 * (z.0 + z.1) - 0.5 * h * (nz - 1) as f64;
        let zp0 = 0.5 * (zp.0 + zp.1) - 0.5 * h * (nzp - 1) as f64;
        Self::new(z0, zp0, h, nz, nzp, dx, dy)
    }

    pub fn z(&self, i: usize) -> f64 {
        self.z0 + self.spacing * i as f64
    }

    pub fn zp(&self, j: usize) -> f64 {
        self.zp0 + self.spacing * j as f64
    }

    pub fn z_max(&self) -> f64 {
        self.z(self.nz - 1)
    }

    pub fn zp_max(&self) -> f64 {
        self.zp(self.nzp - 1)
    }

    pub fn rho(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    fn check(&self, charge: &MovingCharge, reach: (f64, f64), test: &TestParticleSpec) -> Result<()> {
        let limit = 0.25 * charge.width().min(test.packet.width());
        if self.spacing > limit {
            return Err(Error::GridTooCoarse { spacing: self.spacing, limit });
        }
        let c = charge.center();
        let (e, ep) = (charge.width(), test.packet.width());
        let cp = test.packet.center()[2];
        let z_ok = self.z0 <= c + reach.0 - 8.0 * e && self.z_max() >= c + reach.1 + 8.0 * e;
        let zp_ok = self.zp0 <= cp - 8.0 * ep && self.zp_max() >= cp + 8.0 * ep;
        if !z_ok || !zp_ok {
            return Err(Error::InvalidParameter(format!(
                "grid z in [{:.3}, {:.3}], z' in [{:.3}, {:.3}] does not cover 8 widths around \
                 [{:.3}, {:.3}] and {cp:.3}",
                self.z0,
                self.z_max(),
                self.zp0,
                self.zp_max(),
                c + reach.0,
                c + reach.1
            )));
        }
        Ok(())
    }
}

/// Two-particle amplitude on a [`JointGrid`], row-major in `z`. Stored
/// values are the amplitude divided by `e^{log_scale}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState2D {
    grid: JointGrid,
    amplitude: Vec<Complex64>,
    log_scale: f64,
    flagged_cells: usize,
}

impl JointState2D {
    pub fn from_parts(grid: JointGrid, amplitude: Vec<Complex64>, log_scale: f64) -> Result<Self> {
        if amplitude.len() != grid.nz * grid.nzp {
            return Err(Error::InvalidParameter(format!(
                "{} amplitudes for a {}x{} grid",
                amplitude.len(),
                grid.nz,
                grid.nzp
            )));
        }
        Ok(Self { grid, amplitude, log_scale, flagged_cells: 0 })
    }

    pub fn grid(&self) -> &JointGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitude
    }

    pub fn amplitude(&self, i: usize, j: usize) -> Complex64 {
        self.amplitude[i * self.grid.nzp + j]
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Cells where some sector's potential is singular; their kick phase is set to 1.
    pub fn flagged_cells(&self) -> usize {
        self.flagged_cells
    }

    /// Grid norm of the stored values, `sum |psi|^2 h^2`.
    pub fn norm_sqr_scaled(&self) -> f64 {
        let h = self.grid.spacing;
        self.amplitude.iter().map(Complex64::norm_sqr).sum::<f64>() * h * h
    }

    /// `ln` of the true grid norm.
    pub fn log_norm_sqr(&self) -> f64 {
        self.norm_sqr_scaled().ln() + 2.0 * self.log_scale
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidParameter("states live on different grids".into()));
        }
        Ok(())
    }

    /// `|<a|b>|^2 / (<a|a><b|b>)` by grid sums.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        self.same_grid(other)?;
        let (mut ab, mut aa, mut bb) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
        for (x, y) in self.amplitude.iter().zip(&other.amplitude) {
            ab += x.conj() * y;
            aa += x.norm_sqr();
            bb += y.norm_sqr();
        }
        if !(aa > 0.0) || !(bb > 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok((ab.norm_sqr() / (aa * bb)).min(1.0))
    }

    /// `||a - b|| / ||b||` on the stored values; scales must agree.
    pub fn relative_distance(&self, other: &Self) -> Result<f64> {
        self.same_grid(other)?;
        let shift = (self.log_scale - other.log_scale).exp();
        let (mut d, mut n) = (0.0, 0.0);
        for (x, y) in self.amplitude.iter().zip(&other.amplitude) {
            d += (x * shift - y).norm_sqr();
            n += y.norm_sqr();
        }
        if !(n > 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok((d / n).sqrt())
    }

    /// Test-particle density `sum_i |psi(z_i, z'_j)|^2 h` per column, unscaled.
    pub fn test_marginal(&self) -> Vec<f64> {
        let h = self.grid.spacing;
        let mut out = vec![0.0; self.grid.nzp];
        for row in self.amplitude.chunks(self.grid.nzp) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x.norm_sqr() * h;
            }
        }
        out
    }

    /// Charge density per row, unscaled.
    pub fn charge_marginal(&self) -> Vec<f64> {
        let h = self.grid.spacing;
        self.amplitude.chunks(self.grid.nzp).map(|r| r.iter().map(Complex64::norm_sqr).sum::<f64>() * h).collect()
    }

    /// Squared singular values of the normalized amplitude matrix, descending;
    /// they sum to one.
    pub fn schmidt_values(&self) -> Result<Vec<f64>> {
        let total: f64 = self.amplitude.iter().map(Complex64::norm_sqr).sum();
        if !(total > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let s = total.sqrt();
        let m = DMatrix::from_fn(self.grid.nz, self.grid.nzp, |i, j| self.amplitude(i, j) / s);
        let mut sv: Vec<f64> = m.singular_values().iter().map(|x| x * x).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        Ok(sv)
    }

    /// Binary table: magic `WFJOINT1`, `nz` and `nzp` as `u64`, then `z0`, `zp0`,
    /// `spacing`, `dx`, `dy`, `log_scale` as `f64`, then `(re, im)` pairs
    /// row-major in `z`. Everything little-endian.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.grid.nz as u64).to_le_bytes())?;
        out.write_all(&(self.grid.nzp as u64).to_le_bytes())?;
        let g = &self.grid;
        for x in [g.z0, g.zp0, g.spacing, g.dx, g.dy, self.log_scale] {
            out.write_all(&x.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(16 * self.amplitude.len());
        for c in &self.amplitude {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_binary<R: Read>(mut input: R) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a joint-state table"));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> io::Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let nz = u64::from_le_bytes(next(&mut input)?) as usize;
        let nzp = u64::from_le_bytes(next(&mut input)?) as usize;
        let mut f = [0.0; 6];
        for x in &mut f {
            *x = f64::from_le_bytes(next(&mut input)?);
        }
        let grid = JointGrid::new(f[0], f[1], f[2], nz, nzp, f[3], f[4]).map_err(|e| bad(&e.to_string()))?;
        let mut raw = vec![0u8; 16 * nz * nzp];
        input.read_exact(&mut raw)?;
        let amplitude = raw
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Ok(Self { grid, amplitude, log_scale: f[5], flagged_cells: 0 })
    }
}

const MAGIC: &[u8; 8] = b"WFJOINT1";

/// Writes `key,value` rows: grid norms, fidelity and leading Schmidt values
/// of each labelled state.
pub fn write_summary_csv<W: Write>(
    mut out: W,
    states: &[(&str, &JointState2D)],
    fidelity: Option<f64>,
    n_schmidt: usize,
) -> io::Result<()> {
    writeln!(out, "key,value")?;
    for (label, s) in states {
        writeln!(out, "{label}.log_norm_sqr,{:.17e}", s.log_norm_sqr())?;
        writeln!(out, "{label}.flagged_cells,{}", s.flagged_cells())?;
        if let Ok(sv) = s.schmidt_values() {
            for (k, x) in sv.iter().take(n_schmidt).enumerate() {
                writeln!(out, "{label}.schmidt_{},{x:.17e}", k + 1)?;
            }
        }
    }
    if let Some(f) = fidelity {
        writeln!(out, "fidelity,{f:.17e}")?;
    }
    Ok(())
}

/// Potential `V` and vector potential `A_z = v V` at separation `(rho, delta)`
/// from a charge `q` moving at `v`, taken from the field samples. Cells on
/// the worldline come back flagged with zero potential.
pub fn relative_potential(q: f64, v: f64, rho: f64, delta: f64, mode: FieldMode) -> (f64, f64, bool) {
    let src = SourceSpec { q, v, t: 0.0 };
    let s = fields::sample(&src, [rho, 0.0, delta], mode, 0.0);
    (s.v, s.a_z, s.flag == SampleFlag::OnWorldline)
}

/// Largest `|V|` of the weak-substituted potential over the grid cells,
/// for calibrating `q'` to a target kick phase.
pub fn max_weak_potential(q: f64, w: f64, grid: &JointGrid, mode: FieldMode) -> f64 {
    let rho = grid.rho();
    let mut best: f64 = 0.0;
    for i in 0..grid.nz {
        for j in 0..grid.nzp {
            let (v, _, _) = relative_potential(q, w, rho, grid.zp(j) - grid.z(i), mode);
            best = best.max(v.abs());
        }
    }
    best
}

/// Postselected joint state `sum_n w_n Phi(z - v_n T) e^{-i q' V(rho, z' - z; v_n)} Omega(z')`
/// with an infinite-mass test particle, evaluated at multiprecision.
///
/// Every sector speed obeys `|v_n| <= 1`, where the boosted Coulomb form is
/// analytic in `v_n^2` and is used for all sectors. The stored values are
/// divided by `|<pre|post>|`.
pub fn joint_kick_exact(
    charge: &MovingCharge,
    post: &CoinState,
    test: &TestParticleSpec,
    t: f64,
    grid: &JointGrid,
) -> Result<JointState2D> {
    joint_kick_exact_with(charge, post, test, t, grid, ExactMethod::default())
}

pub fn joint_kick_exact_with(
    charge: &MovingCharge,
    post: &CoinState,
    test: &TestParticleSpec,
    t: f64,
    grid: &JointGrid,
    method: ExactMethod,
) -> Result<JointState2D> {
    if test.mass != Mass::Infinite {
        return Err(Error::InvalidParameter(
            "the exact kick takes an infinite-mass test particle; use joint_kick_finite_m".into(),
        ));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!("kick time must be non-negative, got {t}")));
    }
    post.check_overlap()?;
    grid.check(charge, (-t, t), test)?;
    let kick = exact::exact_kick(
        post,
        charge.width(),
        charge.center(),
        t,
        charge.q * test.charge,
        grid,
        method,
    );
    let pref = charge.packet.amplitude() * gauss(0.0, charge.width());
    let omega: Vec<Complex64> = (0..grid.nzp).map(|j| test.omega(grid.zp(j))).collect();
    let amplitude = kick
        .values
        .par_chunks(grid.nzp)
        .flat_map_iter(|row| row.iter().zip(&omega).map(|(x, o)| pref * x * o).collect::<Vec<_>>())
        .collect();
    Ok(JointState2D { grid: *grid, amplitude, log_scale: coin::log_overlap(post), flagged_cells: kick.flagged })
}

/// Weak-substituted product `e^{-i q' V(rho, z' - z; w)} Phi(z - wT) Omega(z')`.
/// For `|w| > 1` the potential vanishes outside the support of `mode`.
pub fn joint_kick_weak(
    charge: &MovingCharge,
    w: f64,
    test: &TestParticleSpec,
    t: f64,
    grid: &JointGrid,
    mode: FieldMode,
) -> Result<JointState2D> {
    if !w.is_finite() || !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter("weak speed and kick time must be finite, T >= 0".into()));
    }
    let reach = (w * t).min(0.0)..=(w * t).max(0.0);
    grid.check(charge, (*reach.start(), *reach.end()), test)?;
    let rho = grid.rho();
    let qq = test.charge;
    let c = charge.center();
    let rows: Vec<(Vec<Complex64>, usize)> = (0..grid.nz)
        .into_par_iter()
        .map(|i| {
            let z = grid.z(i);
            let phi = charge.packet.amplitude() * gauss(z - c - w * t, charge.width());
            let mut flagged = 0;
            let row = (0..grid.nzp)
                .map(|j| {
                    let zp = grid.zp(j);
                    let (v, _, f) = relative_potential(charge.q, w, rho, zp - z, mode);
                    flagged += usize::from(f);
                    phi * Complex64::from_polar(1.0, -qq * v) * test.omega(zp)
                })
                .collect();
            (row, flagged)
        })
        .collect();
    let flagged_cells = rows.iter().map(|r| r.1).sum();
    let amplitude = rows.into_iter().flat_map(|r| r.0).collect();
    Ok(JointState2D { grid: *grid, amplitude, log_scale: 0.0, flagged_cells })
}

/// Which charge state the finite-mass kick acts on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KickBranch {
    /// Sum over sectors, each with its own `v_n` in `V` and `A_z`.
    Exact(CoinState),
    /// Single packet at the weak speed.
    Weak { w: f64, mode: FieldMode },
}

/// Kick with the full exponent `(p' - q'A_z)^2/2m + q'V`, one sector at a
/// time. The inner exponential is split into `substeps` symmetric steps
/// and the result is checked against twice as many; a change above
/// [`SPLIT_STEP_TOL`] is an error.
///
/// The exact branch sums sectors in double precision and refuses coin
/// states whose sector sum would cancel by more than
/// [`MAX_CANCELLATION_DIGITS`].
pub fn joint_kick_finite_m(
    charge: &MovingCharge,
    branch: &KickBranch,
    test: &TestParticleSpec,
    t: f64,
    grid: &JointGrid,
    substeps: usize,
) -> Result<JointState2D> {
    let Mass::Finite(m) = test.mass else {
        return Err(Error::InvalidParameter("finite-mass kick needs a finite mass".into()));
    };
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!("kick time must be non-negative, got {t}")));
    }
    // (sector speed, weight / |ov|, mode)
    let (sectors, log_scale): (Vec<(f64, f64)>, f64) = match branch {
        KickBranch::Exact(post) => {
            post.check_overlap()?;
            grid.check(charge, (-t, t), test)?;
            let (a, b) = (post.amp_up(), post.amp_down());
            let digits = f64::from(post.n_spins()) * ((a.abs() + b.abs()) / (a + b).abs()).log10();
            if digits > MAX_CANCELLATION_DIGITS {
                return Err(Error::Cancellation { digits });
            }
            let lov = coin::log_overlap(post);
            let s = coin::sector_decomposition(post)
                .into_iter()
                .filter(|s| s.sign != 0)
                .map(|s| (s.eigenvalue, f64::from(s.sign) * (s.log_abs_weight - lov).exp()))
                .collect();
            (s, lov)
        }
        KickBranch::Weak { w, .. } => {
            grid.check(charge, ((w * t).min(0.0), (w * t).max(0.0)), test)?;
            (vec![(*w, 1.0)], 0.0)
        }
    };
    let mode = match branch {
        KickBranch::Exact(_) => FieldMode::ClosedForm,
        KickBranch::Weak { mode, .. } => *mode,
    };
    let coarse = finite_mass_state(charge, &sectors, mode, test, m, t, grid, substeps);
    let fine = finite_mass_state(charge, &sectors, mode, test, m, t, grid, 2 * substeps);
    let mut coarse = JointState2D { grid: *grid, amplitude: coarse.0, log_scale, flagged_cells: coarse.1 };
    let fine = JointState2D { grid: *grid, amplitude: fine.0, log_scale, flagged_cells: fine.1 };
    let change = coarse.relative_distance(&fine)?;
    if change > SPLIT_STEP_TOL {
        return Err(Error::SplitStepUnconverged { substeps: 2 * substeps, change });
    }
    coarse.amplitude = fine.amplitude;
    Ok(coarse)
}

#[allow(clippy::too_many_arguments)]
fn finite_mass_state(
    charge: &MovingCharge,
    sectors: &[(f64, f64)],
    mode: FieldMode,
    test: &TestParticleSpec,
    mass: f64,
    t: f64,
    grid: &JointGrid,
    substeps: usize,
) -> (Vec<Complex64>, usize) {
    let step = finite_mass::SplitStep::new(grid.nzp, grid.spacing, mass, substeps);
    let omega: Vec<Complex64> = (0..grid.nzp).map(|j| test.omega(grid.zp(j))).collect();
    let rho = grid.rho();
    let c = charge.center();
    let qp = test.charge;
    let rows: Vec<(Vec<Complex64>, usize)> = (0..grid.nz)
        .into_par_iter()
        .map(|i| {
            let z = grid.z(i);
            let mut row = vec![Complex64::new(0.0, 0.0); grid.nzp];
            let mut flagged = 0;
            let coeffs: Vec<f64> =
                sectors.iter().map(|&(v, w)| w * gauss(z - c - v * t, charge.width())).collect();
            let biggest = coeffs.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            for (&(v, _), &coef) in sectors.iter().zip(&coeffs) {
                if coef == 0.0 || coef.abs() < 1e-18 * biggest {
                    continue;
                }
                let mut phi = Vec::with_capacity(grid.nzp);
                let mut gauge = Vec::with_capacity(grid.nzp);
                for j in 0..grid.nzp {
                    let d = grid.zp(j) - z;
                    let (pot, _, f) = relative_potential(charge.q, v, rho, d, mode);
                    if f {
                        flagged += 1;
                    }
                    phi.push(qp * pot);
                    gauge.push(qp * v * charge.q * finite_mass::potential_antiderivative(v, rho, d, mode));
                }
                let mut psi = omega.clone();
                step.apply(&mut psi, &phi, &gauge);
                for (r, p) in row.iter_mut().zip(&psi) {
                    *r += p * coef;
                }
            }
            let pref = charge.packet.amplitude();
            for r in &mut row {
                *r *= pref;
            }
            (row, flagged)
        })
        .collect();
    let flagged = rows.iter().map(|r| r.1).sum();
    (rows.into_iter().flat_map(|r| r.0).collect(), flagged)
}

/// One `(n, p)` cell of the moment-replacement table.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCell {
    pub n: u32,
    pub p: f64,
    /// Relative error exact vs weak, one entry per ladder rung.
    pub errors: Vec<f64>,
}

/// Errors at or below this level count as exact zeros.
pub const MOMENT_ZERO: f64 = 1e-14;

impl MomentCell {
    /// Every rung is zero to rounding.
    pub fn is_identically_zero(&self) -> bool {
        self.errors.iter().all(|e| e.abs() <= MOMENT_ZERO)
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }

    /// Successive ratios `error(N_k) / error(N_{k+1})`.
    pub fn ratios(&self) -> Vec<f64> {
        self.errors.windows(2).map(|w| w[0] / w[1]).collect()
    }

    /// Least-squares slope of `ln error` against `ln N`.
    pub fn slope(&self, ladder: &[u32]) -> f64 {
        log_log_slope(ladder.iter().map(|&n| f64::from(n)), self.errors.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub ladder: Vec<u32>,
    pub t: f64,
    pub cells: Vec<MomentCell>,
}

impl MomentTable {
    /// Largest (least negative) ladder slope over cells that are not identically zero.
    pub fn largest_slope(&self) -> f64 {
        self.cells
            .iter()
            .filter(|c| !c.is_identically_zero())
            .map(|c| c.slope(&self.ladder))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every cell that is not identically zero decreases strictly along the ladder.
    pub fn all_decreasing(&self) -> bool {
        self.cells.iter().all(|c| c.is_identically_zero() || c.strictly_decreasing())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "n,p")?;
        for n in &self.ladder {
            write!(out, ",err_N{n}")?;
        }
        writeln!(out, ",slope")?;
        for c in &self.cells {
            write!(out, "{},{}", c.n, c.p)?;
            for e in &c.errors {
                write!(out, ",{e:.6e}")?;
            }
            writeln!(out, ",{:.6}", c.slope(&self.ladder))?;
        }
        Ok(())
    }
}

/// Relative error of `<v^n e^{-ipvT}>` exact against weak for `n <= n_max`,
/// each `p` in `p_grid` and each `N` in `ladder`, with the coin amplitudes of `post`.
pub fn moment_replacement_check(
    post: &CoinState,
    n_max: u32,
    p_grid: &[f64],
    t: f64,
    ladder: &[u32],
) -> Result<MomentTable> {
    post.check_overlap()?;
    if ladder.is_empty() || p_grid.is_empty() {
        return Err(Error::InvalidParameter("ladder and p grid must be non-empty".into()));
    }
    let posts = ladder.iter().map(|&n| post.with_spins(n)).collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for n in 0..=n_max {
        for &p in p_grid {
            let errors = posts
                .iter()
                .map(|ps| coin::moment_element(ps, n, p, t).map(|m| m.relative_error()))
                .collect::<Result<Vec<_>>>()?;
            cells.push(MomentCell { n, p, errors });
        }
    }
    Ok(MomentTable { ladder: ladder.to_vec(), t, cells })
}

pub(crate) fn log_log_slope(x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
    let pts: Vec<(f64, f64)> = x.zip(y).filter(|(_, y)| *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Ratio above which `>>` counts as satisfied.
pub const MUCH_GREATER: f64 = 10.0;

/// An observer at distance `D` trying to localize the charge through its
/// field within a horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalityQuery {
    pub distance: f64,
    /// Field uncertainty; `1/D^2` when absent.
    pub delta_e: Option<f64>,
    pub n_spins: u32,
    pub q: f64,
    pub horizon: f64,
}

impl CausalityQuery {
    pub fn new(distance: f64, delta_e: Option<f64>, n_spins: u32, q: f64, horizon: f64) -> Result<Self> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(distance) || !pos(horizon) || n_spins == 0 || !q.is_finite() || delta_e.is_some_and(|e| !pos(e)) {
            return Err(Error::InvalidParameter(
                "causality query needs D, T, N, Delta E > 0 and a finite charge".into(),
            ));
        }
        Ok(Self { distance, delta_e, n_spins, q, horizon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalityReport {
    pub delta_e: f64,
    /// `D^3 Delta E / 2q`
    pub delta_z: f64,
    /// `sqrt(N) Delta z / |w T|`
    pub resolution_ratio: f64,
    pub resolution_ok: bool,
    /// `N / 4q^2`; the fluctuation condition holds when it exceeds 1.
    pub fluctuation_margin: f64,
    pub fluctuation_ok: bool,
    /// `D <= T`: the observer can receive the field within the horizon.
    pub causal_contact: bool,
    /// `sqrt(N) eps / |w T|`, the same ratio with the packet width.
    pub width_ratio: f64,
}

/// Evaluates the two conditions under which an observer at distance `D`
/// cannot resolve the weak-speed displacement through the field.
pub fn causality_check(query: &CausalityQuery, w: f64, eps: f64) -> Result<CausalityReport> {
    if !w.is_finite() || !(eps > 0.0) {
        return Err(Error::InvalidParameter("w must be finite and eps positive".into()));
    }
    let d = query.distance;
    let delta_e = query.delta_e.unwrap_or(1.0 / (d * d));
    let q = query.q.abs();
    let sqrt_n = f64::from(query.n_spins).sqrt();
    let travel = (w * query.horizon).abs();
    let delta_z = if q == 0.0 { f64::INFINITY } else { d.powi(3) * delta_e / (2.0 * q) };
    let resolution_ratio = if travel == 0.0 { f64::INFINITY } else { sqrt_n * delta_z / travel };
    let fluctuation_margin = if q == 0.0 { f64::INFINITY } else { f64::from(query.n_spins) / (4.0 * q * q) };
    let width_ratio = if travel == 0.0 { f64::INFINITY } else { sqrt_n * eps / travel };
    Ok(CausalityReport {
        delta_e,
        delta_z,
        resolution_ratio,
        resolution_ok: resolution_ratio >= MUCH_GREATER,
        fluctuation_margin,
        fluctuation_ok: fluctuation_margin > 1.0,
        causal_contact: d <= query.horizon,
        width_ratio,
    })
}

#[cfg(test)]
mod tests;
