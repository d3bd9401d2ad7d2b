//! Gaussian wavepackets under `H = p_z v_z`: exact postselected evolution,
//! the weak-value displacement, and measures of how close the two are.
//!
//! Only `z` evolves; the transverse factors of the packet ride along
//! unchanged. Amplitudes are unnormalized throughout and normalized only
//! inside [`fidelity`] and peak metrics.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rug::Float;

use crate::coin::{self, CoinState};
use crate::error::{Error, Result};
use crate::mp;

/// Gaussian packet `A (e^2 pi)^{-3/4} exp(-|x - c|^2 / 2e^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPacket {
    center: [f64; 3],
    width: f64,
    amplitude: Complex64,
}

impl GaussianPacket {
    pub fn new(center: [f64; 3], width: f64, amplitude: Complex64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::InvalidParameter(format!("width must be positive, got {width}")));
        }
        if center.iter().any(|c| !c.is_finite()) || !amplitude.re.is_finite() || !amplitude.im.is_finite() {
            return Err(Error::InvalidParameter("packet parameters must be finite".into()));
        }
        Ok(Self { center, width, amplitude })
    }

    /// Unit-amplitude packet at the origin.
    pub fn centered(width: f64) -> Result<Self> {
        Self::new([0.0; 3], width, Complex64::new(1.0, 0.0))
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn amplitude(&self) -> Complex64 {
        self.amplitude
    }

    #[must_use]
    pub fn displaced(&self, dz: f64) -> Self {
        let mut p = *self;
        p.center[2] += dz;
        p
    }

    /// One-dimensional factor `(e^2 pi)^{-1/4} exp(-u^2/2e^2)`, `u` measured
    /// from the centre.
    #[must_use]
    pub fn profile(&self, u: f64) -> f64 {
        gauss(u, self.width)
    }

    /// Product of the two transverse factors at `(x, y)`.
    #[must_use]
    pub fn transverse_factor(&self, x: f64, y: f64) -> f64 {
        gauss(x - self.center[0], self.width) * gauss(y - self.center[1], self.width)
    }

    #[must_use]
    pub fn value(&self, x: [f64; 3]) -> Complex64 {
        self.amplitude * self.transverse_factor(x[0], x[1]) * gauss(x[2] - self.center[2], self.width)
    }

    /// `|A|^2`; the profile itself has unit norm.
    #[must_use]
    pub fn norm_sqr(&self) -> f64 {
        self.amplitude.norm_sqr()
    }
}

/// Normalized 1D Gaussian.
pub(crate) fn gauss(u: f64, eps: f64) -> f64 {
    (eps * eps * PI).powf(-0.25) * (-u * u / (2.0 * eps * eps)).exp()
}

/// Physicists' Hermite polynomial by upward recurrence.
pub(crate) fn hermite(n: u32, x: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = 2.0 * x;
    for k in 1..n {
        let h2 = 2.0 * x * h1 - 2.0 * f64::from(k) * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `d^n/du^n` of the normalized 1D Gaussian.
pub(crate) fn gauss_derivative(n: u32, u: f64, eps: f64) -> f64 {
    let s = eps * std::f64::consts::SQRT_2;
    (-1.0 / s).powi(n as i32) * hermite(n, u / s) * gauss(u, eps)
}

/// One term `coefficient * d^n/dz^n G(z - c - displacement)`.
///
/// The coefficient is stored as `phase * exp(log_abs)`: binomial weights of
/// large `N` do not fit a double.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub log_abs: f64,
    pub phase: Complex64,
    pub displacement: f64,
    pub derivative: u32,
}

impl Term {
    #[must_use]
    pub fn new(coefficient: Complex64, displacement: f64, derivative: u32) -> Self {
        let r = coefficient.norm();
        let phase = if r == 0.0 { Complex64::new(0.0, 0.0) } else { coefficient / r };
        Self { log_abs: r.ln(), phase, displacement, derivative }
    }

    /// The coefficient as a double; may under- or overflow.
    #[must_use]
    pub fn coefficient(&self) -> Complex64 {
        self.phase * self.log_abs.exp()
    }
}

/// Sum of displaced (and possibly differentiated) copies of a base Gaussian.
///
/// Amplitudes returned by the evaluation methods are divided by
/// `exp(log_scale)`. For the output of [`evolve_exact`] the scale is the
/// coin overlap `|<post|pre>|`, so values are O(1) near the weak peak.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketSuperposition {
    base: GaussianPacket,
    terms: Vec<Term>,
    log_scale: f64,
    origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Explicit,
    /// Exact evolution of `base` for time `t` with postselection `post`.
    Binomial { post: CoinState, t: f64 },
}

impl From<GaussianPacket> for PacketSuperposition {
    fn from(base: GaussianPacket) -> Self {
        Self::explicit(base, vec![Term::new(Complex64::new(1.0, 0.0), 0.0, 0)])
    }
}

impl PacketSuperposition {
    /// Superposition of explicit terms.
    #[must_use]
    pub fn explicit(base: GaussianPacket, terms: Vec<Term>) -> Self {
        let log_scale = terms
            .iter()
            .map(|t| t.log_abs)
            .fold(f64::NEG_INFINITY, f64::max);
        let log_scale = if log_scale.is_finite() { log_scale } else { 0.0 };
        Self { base, terms, log_scale, origin: Origin::Explicit }
    }

    pub fn base(&self) -> &GaussianPacket {
        &self.base
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// `ln` of the reference scale dividing every returned amplitude.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn is_binomial(&self) -> bool {
        matches!(self.origin, Origin::Binomial { .. })
    }

    /// Multiplier `m(p)` with `psi~(p) = A Phi~(p) e^{-ipc} m(p) exp(log_scale)`.
    /// Momentum-space multiplier `m(p)` times `e^{log_weight}`.
    fn weighted_multiplier(&self, p: f64, log_weight: f64) -> Complex64 {
        match self.origin {
            Origin::Binomial { post, t } => {
                let w = coin::weak_velocity(&post).expect("checked at construction");
                let th = p * t / f64::from(post.n_spins());
                coin::generating_ratio_scaled(w, th, post.n_spins(), log_weight) * coin::overlap_sign(&post)
            }
            Origin::Explicit => self
                .terms
                .iter()
                .map(|t| {
                    let ip = Complex64::new(0.0, p).powu(t.derivative);
                    t.phase
                        * (t.log_abs - self.log_scale + log_weight).exp()
                        * ip
                        * Complex64::from_polar(1.0, -p * t.displacement)
                })
                .sum(),
        }
    }

    /// Bound on `ln |m(p)|` for all `|p'| >= |p|` is not needed; this bounds
    /// `ln |m(p)|` itself, used to size the quadrature.
    fn log_multiplier_bound(&self, p: f64) -> f64 {
        match self.origin {
            Origin::Binomial { post, t } => {
                let w = coin::weak_velocity(&post).expect("checked at construction");
                let n = f64::from(post.n_spins());
                let grow = (w * w - 1.0).max(0.0);
                (grow * p * p * t * t / (2.0 * n)).min(0.5 * n * (w * w).max(1.0).ln())
            }
            Origin::Explicit => {
                let s: f64 = self
                    .terms
                    .iter()
                    .map(|t| (t.log_abs - self.log_scale).exp() * p.abs().powi(t.derivative as i32))
                    .sum();
                s.max(1e-300).ln()
            }
        }
    }

    /// Half-width of the region outside which the amplitude is negligible,
    /// measured from the base centre.
    fn extent(&self) -> f64 {
        let eps = self.base.width;
        let reach = match self.origin {
            Origin::Binomial { post, t } => {
                let w = coin::weak_velocity(&post).expect("checked at construction");
                w.abs().max(1.0) * t
            }
            Origin::Explicit => self.terms.iter().map(|t| t.displacement.abs()).fold(0.0, f64::max),
        };
        let dmax = self.terms.iter().map(|t| t.derivative).max().unwrap_or(0);
        reach + (16.0 + f64::from(dmax).sqrt() * 2.0) * eps
    }

    /// Amplitude of the `z` profile (transverse factors excluded), divided by
    /// `exp(log_scale)`.
    ///
    /// Binomial superpositions are evaluated through the momentum
    /// representation when it is well conditioned and by the multiprecision
    /// sector sum otherwise.
    #[must_use]
    pub fn amplitude(&self, z: f64) -> Complex64 {
        match self.origin {
            Origin::Explicit => self.amplitude_direct(z),
            Origin::Binomial { .. } => {
                if self.momentum_well_conditioned() {
                    self.amplitude_momentum(z)
                } else {
                    self.amplitude_sector_sum(z)
                }
            }
        }
    }

    /// Full 3D amplitude divided by `exp(log_scale)`.
    #[must_use]
    pub fn value(&self, x: [f64; 3]) -> Complex64 {
        self.amplitude(x[2]) * self.base.transverse_factor(x[0], x[1])
    }

    /// Amplitudes on `z0 + j dz`, `j < n`, evaluated in parallel.
    #[must_use]
    pub fn amplitudes_on_grid(&self, z0: f64, dz: f64, n: usize) -> Vec<Complex64> {
        match self.origin {
            Origin::Binomial { .. } if self.momentum_well_conditioned() => {
                let reach = (z0 - self.base.center[2]).abs().max((z0 + dz * n as f64 - self.base.center[2]).abs());
                let q = self.quadrature(reach);
                (0..n).into_par_iter().map(|j| q.amplitude(self, z0 + dz * j as f64)).collect()
            }
            _ => (0..n).into_par_iter().map(|j| self.amplitude(z0 + dz * j as f64)).collect(),
        }
    }

    fn amplitude_direct(&self, z: f64) -> Complex64 {
        let eps = self.base.width;
        let u0 = z - self.base.center[2];
        self.terms
            .iter()
            .map(|t| {
                t.phase
                    * (t.log_abs - self.log_scale).exp()
                    * gauss_derivative(t.derivative, u0 - t.displacement, eps)
            })
            .sum::<Complex64>()
            * self.base.amplitude
    }

    /// `(w^2 - 1) t^2 / N <= 3 e^2 / 4`: the momentum integrand then decays at
    /// least like `exp(-e^2 p^2 / 8)` and the transform loses no digits.
    fn momentum_well_conditioned(&self) -> bool {
        match self.origin {
            Origin::Binomial { post, t } => {
                let w = coin::weak_velocity(&post).expect("checked at construction");
                let eps = self.base.width;
                (w * w - 1.0).max(0.0) * t * t / f64::from(post.n_spins()) <= 0.75 * eps * eps
            }
            Origin::Explicit => true,
        }
    }

    /// Amplitude via `(1/sqrt 2pi) int Phi~(p) m(p) e^{ip(z-c)} dp`.
    #[must_use]
    pub fn amplitude_momentum(&self, z: f64) -> Complex64 {
        let q = self.quadrature((z - self.base.center[2]).abs());
        q.amplitude(self, z)
    }

    /// Amplitude via the position-space sector sum at full multiprecision.
    /// Explicit superpositions are summed directly.
    #[must_use]
    pub fn amplitude_sector_sum(&self, z: f64) -> Complex64 {
        match self.origin {
            Origin::Explicit => self.amplitude_direct(z),
            Origin::Binomial { post, t } => {
                let lat = binomial_lattice(&self.base, &post, t);
                let v = lat.eval(z - self.base.center[2]);
                let prec = lat.prec();
                let ov = mp::overlap(post.amp_up(), post.amp_down(), post.n_spins(), prec).abs();
                let r = (v / ov).to_f64();
                self.base.amplitude * (r * gauss(0.0, self.base.width))
            }
        }
    }

    fn quadrature(&self, reach: f64) -> Quadrature {
        Quadrature::new(self.base.width, self.extent() + reach, |p| self.log_multiplier_bound(p))
    }

    /// `<self|self>` divided by `exp(2 log_scale)`.
    #[must_use]
    pub fn norm_sqr_scaled(&self) -> f64 {
        inner_scaled(self, self).re
    }

    /// `ln <self|self>`, including the scale.
    #[must_use]
    pub fn log_norm_sqr(&self) -> f64 {
        self.norm_sqr_scaled().ln() + 2.0 * self.log_scale
    }

    /// Point of maximal `|amplitude|^2`: coarse scan at `e/20` over the
    /// support, then golden-section refinement.
    #[must_use]
    pub fn peak(&self) -> f64 {
        let eps = self.base.width;
        let c = self.base.center[2];
        let half = self.extent() - 8.0 * eps;
        let dz = eps / 20.0;
        let n = (2.0 * half / dz).ceil() as usize + 1;
        let z0 = c - half;
        let vals = self.amplitudes_on_grid(z0, dz, n);
        let (jmax, _) = vals
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (j, v)| if v.norm_sqr() > acc.1 { (j, v.norm_sqr()) } else { acc });
        let zc = z0 + dz * jmax as f64;
        golden_max(|z| self.amplitude(z).norm_sqr(), zc - dz, zc + dz, 1e-10 * eps)
    }
}

/// Maximizes a unimodal `f` on `[lo, hi]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Trapezoid rule on `[-P, P]` for integrands `Phi~(p) m(p) e^{ipu}`.
///
/// The step `h = pi / X` keeps the aliased copies `psi(u + 2 pi k / h)` out
/// of the region `|u| < X` where the state lives; `P` is pushed out until the
/// Gaussian envelope has killed the multiplier bound.
struct Quadrature {
    p: Vec<f64>,
    /// `ln (h Phi~(p))` with unit amplitude.
    log_w: Vec<f64>,
    h: f64,
}

impl Quadrature {
    fn new(eps: f64, extent: f64, log_bound: impl Fn(f64) -> f64) -> Self {
        let h = PI / extent;
        let log_pref = (eps * eps * PI).powf(-0.25).ln() + eps.ln() + h.ln();
        let mut kmax = 1usize;
        loop {
            let p = kmax as f64 * h;
            let env = -eps * eps * p * p / 2.0 + log_bound(p);
            if p * eps > 8.0 && env < -50.0 {
                break;
            }
            kmax += 1;
            if kmax > 1 << 22 {
                break;
            }
        }
        let kmax = kmax as i64;
        let p: Vec<f64> = (-kmax..=kmax).map(|k| k as f64 * h).collect();
        let log_w = p.iter().map(|&p| log_pref - eps * eps * p * p / 2.0).collect();
        Self { p, log_w, h }
    }

    fn amplitude(&self, s: &PacketSuperposition, z: f64) -> Complex64 {
        let u = z - s.base.center[2];
        let step = Complex64::from_polar(1.0, self.h * u);
        let mut e = Complex64::from_polar(1.0, self.p[0] * u);
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, (&p, &lw)) in self.p.iter().zip(&self.log_w).enumerate() {
            if k % 64 == 0 {
                e = Complex64::from_polar(1.0, p * u);
            }
            acc += s.weighted_multiplier(p, lw) * e;
            e *= step;
        }
        acc * s.base.amplitude / (2.0 * PI).sqrt()
    }
}

/// `<a|b>` divided by `exp(log_scale_a + log_scale_b)`.
fn inner_scaled(a: &PacketSuperposition, b: &PacketSuperposition) -> Complex64 {
    let (ea, eb) = (a.base.width, b.base.width);
    assert!((ea - eb).abs() <= 1e-12 * ea, "superpositions must share the packet width");
    let dc = b.base.center[2] - a.base.center[2];
    let extent = a.extent().max(b.extent()) + dc.abs();
    let q = Quadrature::new(ea, extent, |p| a.log_multiplier_bound(p) + b.log_multiplier_bound(p));
    let mut acc = Complex64::new(0.0, 0.0);
    // |Phi~|^2 h, split evenly between the two multipliers.
    let half_h = 0.5 * q.h.ln();
    for (&p, &lw) in q.p.iter().zip(&q.log_w) {
        let l = lw - half_h;
        acc += a.weighted_multiplier(p, l).conj() * b.weighted_multiplier(p, l) * Complex64::from_polar(1.0, -p * dc);
    }
    let dx = b.base.center[0] - a.base.center[0];
    let dy = b.base.center[1] - a.base.center[1];
    let transverse = (-(dx * dx + dy * dy) / (4.0 * ea * ea)).exp();
    acc * a.base.amplitude.conj() * b.base.amplitude * transverse
}

/// `<G^{(j)}(. - d1)|G^{(k)}(. - d2)>` for normalized real Gaussians.
#[must_use]
pub fn gaussian_overlap(j: u32, d1: f64, k: u32, d2: f64, eps: f64) -> f64 {
    let delta = d1 - d2;
    let x = delta / (2.0 * eps);
    let m = j + k;
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    sign * (-1.0 / (2.0 * eps)).powi(m as i32) * hermite(m, x) * (-x * x).exp()
}

/// `<a|b>` from the closed-form Gaussian overlaps (explicit terms only),
/// divided by the two scales.
fn inner_closed_form(a: &PacketSuperposition, b: &PacketSuperposition) -> Complex64 {
    let eps = a.base.width;
    let dc = b.base.center[2] - a.base.center[2];
    let mut acc = Complex64::new(0.0, 0.0);
    for ta in &a.terms {
        let ca = ta.phase * (ta.log_abs - a.log_scale).exp();
        for tb in &b.terms {
            let cb = tb.phase * (tb.log_abs - b.log_scale).exp();
            acc += ca.conj() * cb * gaussian_overlap(ta.derivative, ta.displacement, tb.derivative, tb.displacement + dc, eps);
        }
    }
    let dx = b.base.center[0] - a.base.center[0];
    let dy = b.base.center[1] - a.base.center[1];
    let transverse = (-(dx * dx + dy * dy) / (4.0 * eps * eps)).exp();
    acc * a.base.amplitude.conj() * b.base.amplitude * transverse
}

/// Exact postselected packet `sum_n w_n Phi(x, y, z - v_n t)`.
pub fn evolve_exact(packet: &GaussianPacket, post: &CoinState, t: f64) -> Result<PacketSuperposition> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("t must be non-negative, got {t}")));
    }
    coin::weak_velocity(post)?;
    let log_ov = coin::log_overlap(post);
    let terms = if t == 0.0 {
        vec![Term {
            log_abs: log_ov,
            phase: Complex64::new(coin::overlap_sign(post), 0.0),
            displacement: 0.0,
            derivative: 0,
        }]
    } else {
        coin::sector_decomposition(post)
            .into_iter()
            .filter(|s| s.sign != 0)
            .map(|s| Term {
                log_abs: s.log_abs_weight,
                phase: Complex64::new(f64::from(s.sign), 0.0),
                displacement: s.eigenvalue * t,
                derivative: 0,
            })
            .collect()
    };
    Ok(PacketSuperposition {
        base: *packet,
        terms,
        log_scale: log_ov,
        origin: Origin::Binomial { post: *post, t },
    })
}

/// The packet rigidly displaced by `w t` along `z`.
pub fn evolve_weak(packet: &GaussianPacket, w: f64, t: f64) -> Result<GaussianPacket> {
    if !(t >= 0.0) || !t.is_finite() || !w.is_finite() {
        return Err(Error::InvalidParameter("t must be non-negative and w finite".into()));
    }
    Ok(packet.displaced(w * t))
}

/// `|<a|b>|^2 / (<a|a><b|b>)`.
///
/// Pairs of explicit superpositions use the closed-form Gaussian overlaps.
/// Anything involving an exact binomial evolution is integrated in momentum
/// space, where the cancelling sector sum collapses to the generating
/// function `(cos th - i w sin th)^N`.
pub fn fidelity(a: &PacketSuperposition, b: &PacketSuperposition) -> Result<f64> {
    let closed = !a.is_binomial() && !b.is_binomial();
    let inner = |x: &PacketSuperposition, y: &PacketSuperposition| {
        if closed {
            inner_closed_form(x, y)
        } else {
            inner_scaled(x, y)
        }
    };
    let naa = inner(a, a).re;
    let nbb = inner(b, b).re;
    for (s, n) in [(a, naa), (b, nbb)] {
        if !(n > 1e-26 * coefficient_mass(s)) {
            return Err(Error::ZeroNorm);
        }
    }
    let ab = inner(a, b);
    Ok((ab.norm_sqr() / (naa * nbb)).clamp(0.0, 1.0))
}

/// `(sum |c_i|)^2 |A|^2`: the norm a superposition would have without
/// interference, used to recognize numerically vanishing states.
fn coefficient_mass(s: &PacketSuperposition) -> f64 {
    if s.is_binomial() {
        return 0.0;
    }
    let m: f64 = s.terms.iter().map(|t| (t.log_abs - s.log_scale).exp()).sum();
    m * m * s.base.norm_sqr()
}

/// How the first-order finite-`N` correction is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionModel {
    /// `[1 + p^2 w^2 t^2 / 2N]`, the leading-order expansion.
    #[default]
    Linearized,
    /// `[1 + p^2 (w^2 - 1) t^2 / 2N]`, the exact second-order coefficient of
    /// `(cos th - i w sin th)^N e^{i p w t}`.
    SecondOrder,
}

/// Weak packet with the first-order correction,
/// `G(z - wt) - kappa G''(z - wt)`, i.e. `e^{-ipwt}[1 + kappa p^2]` in
/// momentum space.
pub fn correction_factor(packet: &GaussianPacket, post: &CoinState, t: f64) -> Result<PacketSuperposition> {
    correction_factor_with(packet, post, t, CorrectionModel::default())
}

pub fn correction_factor_with(
    packet: &GaussianPacket,
    post: &CoinState,
    t: f64,
    model: CorrectionModel,
) -> Result<PacketSuperposition> {
    let w = coin::weak_velocity(post)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("t must be non-negative, got {t}")));
    }
    let w2 = match model {
        CorrectionModel::Linearized => w * w,
        CorrectionModel::SecondOrder => w * w - 1.0,
    };
    let kappa = w2 * t * t / (2.0 * f64::from(post.n_spins()));
    let mut terms = vec![Term::new(Complex64::new(1.0, 0.0), w * t, 0)];
    if kappa != 0.0 {
        terms.push(Term::new(Complex64::new(-kappa, 0.0), w * t, 2));
    }
    Ok(PacketSuperposition::explicit(*packet, terms))
}

/// The scalar model of the finite-`N` correction: `(1 + s/N)^N` against its
/// expansion `e^s (1 - s^2/2N + (3s^4 + 8s^3)/24N^2 + ...)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarExpansion {
    pub exact: f64,
    /// `e^s (1 - s^2/2N)`
    pub first_order: f64,
    /// `exact - first_order`
    pub residual: f64,
    /// `e^s (3s^4 + 8s^3) / 24N^2`
    pub second_order_term: f64,
}

#[must_use]
pub fn scalar_expansion(s: f64, n: u32) -> ScalarExpansion {
    let nf = f64::from(n);
    let exact = (f64::from(n) * (s / nf).ln_1p()).exp();
    let first_order = s.exp() * (1.0 - s * s / (2.0 * nf));
    ScalarExpansion {
        exact,
        first_order,
        residual: exact - first_order,
        second_order_term: s.exp() * (3.0 * s.powi(4) + 8.0 * s.powi(3)) / (24.0 * nf * nf),
    }
}

/// Exact versus weak evolution at one `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub n_spins: u32,
    pub fidelity: f64,
    /// `|peak - (c + w t)|`.
    pub peak_error: f64,
    /// `w^2 t^2 / (N e^2)`.
    pub distortion_parameter: f64,
    pub peak: f64,
}

#[must_use]
pub fn distortion_parameter(w: f64, t: f64, n_spins: u32, eps: f64) -> f64 {
    w * w * t * t / (f64::from(n_spins) * eps * eps)
}

pub fn convergence_report(packet: &GaussianPacket, post: &CoinState, t: f64) -> Result<ConvergenceReport> {
    let w = coin::weak_velocity(post)?;
    let exact = evolve_exact(packet, post, t)?;
    let weak = PacketSuperposition::from(evolve_weak(packet, w, t)?);
    let f = fidelity(&exact, &weak)?;
    let peak = exact.peak();
    Ok(ConvergenceReport {
        n_spins: post.n_spins(),
        fidelity: f,
        peak_error: (peak - packet.center[2] - w * t).abs(),
        distortion_parameter: distortion_parameter(w, t, post.n_spins(), packet.width),
        peak,
    })
}

/// Sector lattice for the exact evolution: `w_k` at `d_k = -t + 2tk/N`,
/// positions relative to the packet centre.
fn binomial_lattice(packet: &GaussianPacket, post: &CoinState, t: f64) -> mp::GaussianLattice {
    let (a, b, n) = (post.amp_up(), post.amp_down(), post.n_spins());
    let prec = mp::sum_precision(a, b, n);
    let w = mp::binomial_weights(a, b, n, prec);
    mp::GaussianLattice::new(w, -t, 2.0 * t, n, packet.width, prec)
}

/// Finest spacing accepted by [`light_cone_check`], in units of the width.
pub const LIGHT_CONE_MAX_SPACING: f64 = 1.0 / 8.0;

/// Support bound of an exactly evolved, hard-truncated packet.
#[derive(Debug, Clone, PartialEq)]
pub struct LightConeReport {
    pub truncation: f64,
    pub t: f64,
    /// `truncation + t`, measured from the packet centre.
    pub bound: f64,
    pub grid: Vec<f64>,
    /// `|psi|` of the truncated evolution on `grid`, divided by its maximum.
    pub truncated_profile: Vec<f64>,
    /// `log10` of the maximum absolute truncated amplitude.
    pub log10_truncated_max: f64,
    /// Largest absolute amplitude strictly outside `bound`.
    pub max_outside: f64,
    /// `|psi(c + w t)| / max |psi|` for the untruncated analytic packet.
    pub analytic_probe_ratio: f64,
    pub probe: f64,
}

impl LightConeReport {
    #[must_use]
    pub fn holds(&self) -> bool {
        self.max_outside <= 1e-14
    }
}

/// Evolves `packet * 1[|z - c| <= truncation]` exactly, sector by sector, on
/// a grid of spacing `spacing` over `c +- (truncation + 2t)`.
pub fn light_cone_check(
    packet: &GaussianPacket,
    truncation: f64,
    spacing: f64,
    post: &CoinState,
    t: f64,
) -> Result<LightConeReport> {
    let eps = packet.width;
    let limit = LIGHT_CONE_MAX_SPACING * eps;
    if !(spacing > 0.0) || spacing > limit {
        return Err(Error::GridTooCoarse { spacing, limit });
    }
    if !(truncation > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidParameter("truncation must be positive and t non-negative".into()));
    }
    let w = coin::weak_velocity(post)?;
    let c = packet.center[2];
    let reach = truncation + 2.0 * t;
    let n = (2.0 * reach / spacing).round() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|j| -reach + spacing * j as f64).collect();
    let lat = binomial_lattice(packet, post, t);
    let vals: Vec<Float> = grid
        .par_iter()
        .map(|&u| match lat.window(u, truncation) {
            Some((lo, hi)) => lat.eval_range(u, lo, hi),
            None => Float::with_val(lat.prec(), 0),
        })
        .collect();
    let bound = truncation + t;
    let pref = gauss(0.0, eps) * packet.amplitude.norm();
    let mut max = Float::with_val(lat.prec(), 0);
    for v in &vals {
        let a = Float::with_val(lat.prec(), v.abs_ref());
        if a > max {
            max = a;
        }
    }
    let mut max_outside = 0.0f64;
    for (u, v) in grid.iter().zip(&vals) {
        if u.abs() > bound {
            max_outside = max_outside.max((Float::with_val(lat.prec(), v.abs_ref()) * pref).to_f64());
        }
    }
    let truncated_profile = if max.is_zero() {
        vec![0.0; n]
    } else {
        vals.iter().map(|v| (Float::with_val(lat.prec(), v.abs_ref()) / &max).to_f64()).collect()
    };
    let log10_truncated_max = if max.is_zero() {
        f64::NEG_INFINITY
    } else {
        let (m, e) = max.to_f64_exp();
        (m.abs() * pref).log10() + f64::from(e) * std::f64::consts::LOG10_2
    };
    let analytic = evolve_exact(packet, post, t)?;
    let peak = analytic.peak();
    let probe = c + w * t;
    let analytic_probe_ratio = analytic.amplitude(probe).norm() / analytic.amplitude(peak).norm();
    Ok(LightConeReport {
        truncation,
        t,
        bound,
        grid: grid.iter().map(|u| u + c).collect(),
        truncated_profile,
        log10_truncated_max,
        max_outside,
        analytic_probe_ratio,
        probe,
    })
}
