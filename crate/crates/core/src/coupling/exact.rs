//! Multiprecision evaluation of the postselected joint state
//! `S(z_i, z'_j) = sum_n w_n G(z_i - c - v_n T) e^{-i q q' / sqrt(rho^2 (1 - v_n^2) + (z'_j - z_i)^2)} / |<pre|post>|`
//! with unit-peak Gaussians.
//!
//! On a grid with one spacing `h` for both axes the kick phase depends on
//! `j - i` only, so the grid is swept one diagonal at a time. Along a diagonal
//! the Gaussian factor is `A_i beta_0^n r^{i n} q^{n^2}` with `r = e^{h delta/e^2}`
//! and `i n = (i^2 + n^2 - (i-n)^2)/2` turns the sector sum into a linear
//! convolution (chirp-z). The convolution runs in fixed point through one
//! big-integer product per real part (Kronecker substitution).

use num_complex::Complex64;
use rayon::prelude::*;
use rug::{Float, Integer};

use super::JointGrid;
use crate::coin::{self, CoinState};
use crate::mp::{self, BigComplex};

/// How the per-diagonal sector sums are contracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExactMethod {
    /// Chirp-z convolution through big-integer products.
    #[default]
    Chirp,
    /// Horner pass per grid point; slow, kept as a reference.
    Horner,
}

pub(crate) struct ExactKick {
    pub values: Vec<Complex64>,
    pub flagged: usize,
}

struct Setup {
    n: usize,
    prec: u32,
    /// `w_n q^{n^2}`
    horner_coeffs: Vec<Float>,
    /// `rho^2 (1 - v_n^2)` for `n <= N/2`
    transverse: Vec<Float>,
    qq: Float,
    u0_first: Float,
    spacing: Float,
    delta_over_eps2: Float,
    inv_two_eps2: Float,
    inv_overlap: Float,
    dz0: Float,
}

impl Setup {
    fn u0(&self, i: usize) -> Float {
        Float::with_val(self.prec, &self.spacing * i as u64) + &self.u0_first
    }

    /// Kick phases for `n <= N/2` at separation `z' - z` of diagonal `m`,
    /// plus whether some sector sits on its own worldline there.
    fn phases(&self, m: i64) -> (Vec<BigComplex>, bool) {
        let prec = self.prec;
        let mut d = Float::with_val(prec, &self.spacing * m);
        d += &self.dz0;
        let d2 = Float::with_val(prec, &d * &d);
        let mut flagged = false;
        let ks = self
            .transverse
            .iter()
            .map(|t| {
                let rad = Float::with_val(prec, t + &d2);
                if rad.is_zero() {
                    flagged = true;
                    BigComplex { re: Float::with_val(prec, 1), im: Float::with_val(prec, 0) }
                } else {
                    let phi = -Float::with_val(prec, &self.qq / rad.sqrt());
                    BigComplex::cis(&phi)
                }
            })
            .collect();
        (ks, flagged)
    }

    fn phase_of(&self, ks: &[BigComplex], n: usize) -> usize {
        if n <= self.n / 2 {
            n
        } else {
            self.n - n
        }
        .min(ks.len() - 1)
    }
}

fn diagonal_range(grid: &JointGrid, m: i64) -> (usize, usize) {
    let lo = (-m).max(0) as usize;
    let hi = ((grid.nz as i64 - 1).min(grid.nzp as i64 - 1 - m)) as usize;
    (lo, hi)
}

/// `sum_n w_n G(...) K_n / |ov|` on every grid cell, row-major in `z`.
pub(crate) fn exact_kick(
    post: &CoinState,
    eps: f64,
    center: f64,
    t: f64,
    qq: f64,
    grid: &JointGrid,
    method: ExactMethod,
) -> ExactKick {
    let n_spins = post.n_spins();
    let n = n_spins as usize;
    let (a, b) = (post.amp_up(), post.amp_down());
    let h = grid.spacing;
    let delta = if n == 0 { 0.0 } else { 2.0 * t / n as f64 };
    let u0_first = grid.z0 - center + t;

    let base_bits = mp::sum_precision(a, b, n_spins);
    let extra = match method {
        ExactMethod::Chirp => fixed_point_headroom(post, eps, u0_first, h, delta, grid.nz),
        ExactMethod::Horner => 0,
    };
    let frac_bits = base_bits + extra + 16;
    let prec = frac_bits + 64;

    let weights = mp::binomial_weights(a, b, n_spins, prec);
    let eps2 = Float::with_val(prec, eps) * eps;
    let inv_two_eps2 = Float::with_val(prec, 1) / Float::with_val(prec, &eps2 * 2u32);
    let delta_b = Float::with_val(prec, 2.0 * t) / n as u64;
    let delta_over_eps2 = Float::with_val(prec, &delta_b / &eps2);
    let q_exp = -Float::with_val(prec, &delta_b * &delta_b) * &inv_two_eps2;
    let horner_coeffs: Vec<Float> = weights
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let e = Float::with_val(prec, &q_exp * (k as u64 * k as u64));
            Float::with_val(prec, w * e.exp())
        })
        .collect();
    let rho2 = Float::with_val(prec, grid.dx) * grid.dx + Float::with_val(prec, grid.dy) * grid.dy;
    let nn = Float::with_val(prec, n.max(1) as u64);
    let transverse = (0..=n / 2)
        .map(|k| {
            let v = Float::with_val(prec, 2 * k as i64 - n as i64) / &nn;
            let one_minus = Float::with_val(prec, 1) - Float::with_val(prec, &v * &v);
            Float::with_val(prec, &rho2 * &one_minus)
        })
        .collect();
    let ov = mp::overlap(a, b, n_spins, prec);
    let setup = Setup {
        n,
        prec,
        horner_coeffs,
        transverse,
        qq: Float::with_val(prec, qq),
        u0_first: Float::with_val(prec, grid.z0) - center + t,
        spacing: Float::with_val(prec, h),
        delta_over_eps2,
        inv_two_eps2,
        inv_overlap: Float::with_val(prec, 1) / ov.abs(),
        dz0: Float::with_val(prec, grid.zp0) - grid.z0,
    };

    let m_lo = -(grid.nz as i64 - 1);
    let m_hi = grid.nzp as i64 - 1;
    let diagonals: Vec<(i64, Vec<Complex64>, bool)> = match method {
        ExactMethod::Horner => (m_lo..=m_hi)
            .into_par_iter()
            .map(|m| {
                let (v, f) = horner_diagonal(&setup, grid, m);
                (m, v, f)
            })
            .collect(),
        ExactMethod::Chirp => {
            let chirp = Chirp::new(&setup, grid, frac_bits);
            (m_lo..=m_hi)
                .into_par_iter()
                .map(|m| {
                    let (v, f) = chirp.diagonal(&setup, grid, m);
                    (m, v, f)
                })
                .collect()
        }
    };

    let mut values = vec![Complex64::new(0.0, 0.0); grid.nz * grid.nzp];
    let mut flagged = 0;
    for (m, vals, f) in diagonals {
        let (lo, _) = diagonal_range(grid, m);
        for (k, v) in vals.into_iter().enumerate() {
            let i = lo + k;
            let j = (i as i64 + m) as usize;
            values[i * grid.nzp + j] = v;
            if f {
                flagged += 1;
            }
        }
    }
    ExactKick { values, flagged }
}

fn horner_diagonal(s: &Setup, grid: &JointGrid, m: i64) -> (Vec<Complex64>, bool) {
    let prec = s.prec;
    let (ks, flagged) = s.phases(m);
    let coeffs: Vec<BigComplex> = (0..=s.n)
        .map(|k| {
            let mut c = ks[s.phase_of(&ks, k)].clone();
            c.scale(&s.horner_coeffs[k]);
            c
        })
        .collect();
    let (lo, hi) = diagonal_range(grid, m);
    let out = (lo..=hi)
        .map(|i| {
            let u0 = s.u0(i);
            let beta = Float::with_val(prec, &u0 * &s.delta_over_eps2).exp();
            let mut acc = BigComplex::zero(prec);
            for c in coeffs.iter().rev() {
                acc.scale(&beta);
                acc.re += &c.re;
                acc.im += &c.im;
            }
            let mut row = -Float::with_val(prec, &u0 * &u0) * &s.inv_two_eps2;
            row = row.exp();
            row *= &s.inv_overlap;
            acc.scale(&row);
            acc.to_c64(&Float::with_val(prec, 1))
        })
        .collect();
    (out, flagged)
}

/// Bits beyond the cancellation budget needed so that fixed-point rounding,
/// which is absolute, stays below the largest row sum of `|terms|`.
fn fixed_point_headroom(post: &CoinState, eps: f64, u0_first: f64, h: f64, delta: f64, nz: usize) -> u32 {
    let sectors = coin::sector_decomposition(post);
    let two_e2 = 2.0 * eps * eps;
    let lg: Vec<f64> = sectors
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let k = k as f64;
            if s.sign == 0 {
                f64::NEG_INFINITY
            } else {
                s.log_abs_weight + k * u0_first * delta / (eps * eps) + k * k * (h * delta - delta * delta) / two_e2
            }
        })
        .collect();
    let n = lg.len() - 1;
    let lk = |l: i64| -((l * l) as f64) * h * delta / two_e2;
    let lrow = |i: usize| {
        let u = u0_first + i as f64 * h;
        -u * u / two_e2 + (i * i) as f64 * h * delta / two_e2
    };
    let max_g = lg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kernel_mass = log_sum_exp((-(n as i64)..nz as i64).map(lk));
    let mut reference = f64::NEG_INFINITY;
    let mut max_row = f64::NEG_INFINITY;
    for i in 0..nz {
        let r = lrow(i);
        max_row = max_row.max(r);
        let lse = log_sum_exp(lg.iter().enumerate().map(|(k, g)| g + lk(i as i64 - k as i64)));
        reference = reference.max(r + lse);
    }
    let bits = (max_row + max_g + kernel_mass - reference) / std::f64::consts::LN_2;
    if bits.is_finite() {
        bits.max(0.0).ceil() as u32
    } else {
        0
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Chirp {
    /// `w_n beta_0^n r^{n^2/2} q^{n^2}`
    g: Vec<Float>,
    g_exp: i32,
    frac_bits: u32,
    slot_limbs: usize,
    /// `r^{-l^2/2}` for `l = -N..nz`, fixed point, packed.
    kernel: Vec<u64>,
}

impl Chirp {
    fn new(s: &Setup, grid: &JointGrid, frac_bits: u32) -> Self {
        let prec = s.prec;
        let n = s.n;
        // r^{1/2} exponent: h delta / 2e^2
        let half_log_r = Float::with_val(prec, &s.spacing * &s.delta_over_eps2) / 2u32;
        let log_beta0 = Float::with_val(prec, &s.u0_first * &s.delta_over_eps2);
        let g: Vec<Float> = s
            .horner_coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let k = k as u64;
                let mut e = Float::with_val(prec, &log_beta0 * k);
                e += Float::with_val(prec, &half_log_r * (k * k));
                Float::with_val(prec, c * e.exp())
            })
            .collect();
        let g_exp = g.iter().filter_map(Float::get_exp).max().unwrap_or(0);
        let guard = (usize::BITS - (n + 1).leading_zeros()) + 3;
        let slot_bits = 2 * frac_bits + guard;
        let slot_limbs = slot_bits.div_ceil(64) as usize;
        let len = n + grid.nz;
        let mut kernel = vec![0u64; len * slot_limbs];
        for idx in 0..len {
            let l = idx as i64 - n as i64;
            let e = -Float::with_val(prec, &half_log_r * (l * l) as u64);
            let k = mp::to_fixed(&e.exp(), frac_bits as i32);
            let digits = k.to_digits::<u64>(rug::integer::Order::Lsf);
            kernel[idx * slot_limbs..idx * slot_limbs + digits.len()].copy_from_slice(&digits);
        }
        Self { g, g_exp, frac_bits, slot_limbs, kernel }
    }

    fn diagonal(&self, s: &Setup, grid: &JointGrid, m: i64) -> (Vec<Complex64>, bool) {
        let prec = s.prec;
        let n = s.n;
        let (ks, flagged) = s.phases(m);
        let shift = self.frac_bits as i32 - self.g_exp;
        let mut f_re = Vec::with_capacity(n + 1);
        let mut f_im = Vec::with_capacity(n + 1);
        for (k, g) in self.g.iter().enumerate() {
            let kk = &ks[s.phase_of(&ks, k)];
            f_re.push(mp::to_fixed(&Float::with_val(prec, g * &kk.re), shift));
            f_im.push(mp::to_fixed(&Float::with_val(prec, g * &kk.im), shift));
        }
        let (lo, hi) = diagonal_range(grid, m);
        let l = self.slot_limbs;
        let y = Integer::from_digits(&self.kernel[lo * l..(hi + n + 1) * l], rug::integer::Order::Lsf);
        let count = hi - lo + 1;
        let z_re = mp::unpack_signed(&(mp::pack_signed(&f_re, l) * &y), l, n, count);
        let z_im = mp::unpack_signed(&(mp::pack_signed(&f_im, l) * &y), l, n, count);
        let back = self.g_exp - 2 * self.frac_bits as i32;
        let out = (0..count)
            .map(|k| {
                let i = lo + k;
                let u0 = s.u0(i);
                // A_i r^{i^2/2} / |ov|
                let mut e = -Float::with_val(prec, &u0 * &u0) * &s.inv_two_eps2;
                let ii = i as u64;
                e += Float::with_val(prec, &s.spacing * &s.delta_over_eps2) * (ii * ii) / 2u32;
                let mut row = e.exp();
                row *= &s.inv_overlap;
                let mut re = Float::with_val(prec, &z_re[k]);
                let mut im = Float::with_val(prec, &z_im[k]);
                if back >= 0 {
                    re <<= back as u32;
                    im <<= back as u32;
                } else {
                    re >>= (-back) as u32;
                    im >>= (-back) as u32;
                }
                re *= &row;
                im *= &row;
                Complex64::new(re.to_f64(), im.to_f64())
            })
            .collect();
        (out, flagged)
    }
}
