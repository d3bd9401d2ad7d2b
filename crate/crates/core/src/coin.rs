//! The N-spin coin space, its velocity spectrum and weak values.
//!
//! The velocity operator `v = (1/N) sum_i sigma_z^(i)` has eigenvalues
//! `(2n - N)/N`. Pre- and postselected states are symmetric products, so the
//! `2^N` dimensional space reduces to `N + 1` sectors.

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on `amp_up^2 + amp_down^2 = 1`.
pub const NORM_TOL: f64 = 1e-12;

/// Symmetric product state `(amp_up |up> + amp_down |down>)^{(x) N}` with real
/// amplitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoinState {
    n_spins: u32,
    amp_up: f64,
    amp_down: f64,
}

impl CoinState {
    pub fn new(n_spins: u32, amp_up: f64, amp_down: f64) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidParameter("n_spins must be at least 1".into()));
        }
        if !amp_up.is_finite() || !amp_down.is_finite() {
            return Err(Error::InvalidParameter("amplitudes must be finite".into()));
        }
        let norm = amp_up * amp_up + amp_down * amp_down;
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "amp_up^2 + amp_down^2 = {norm}, expected 1"
            )));
        }
        Ok(Self { n_spins, amp_up, amp_down })
    }

    /// Rescales `(up, down)` to unit norm first.
    pub fn normalized(n_spins: u32, up: f64, down: f64) -> Result<Self> {
        let r = up.hypot(down);
        if r == 0.0 || !r.is_finite() {
            return Err(Error::InvalidParameter("amplitudes must not both vanish".into()));
        }
        Self::new(n_spins, up / r, down / r)
    }

    /// The preselected state, every spin in `(|up> + |down>)/sqrt 2`.
    pub fn preselected(n_spins: u32) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { n_spins: n_spins.max(1), amp_up: h, amp_down: h }
    }

    pub fn n_spins(&self) -> u32 {
        self.n_spins
    }

    pub fn amp_up(&self) -> f64 {
        self.amp_up
    }

    pub fn amp_down(&self) -> f64 {
        self.amp_down
    }

    /// Same amplitudes, different `N`.
    pub fn with_spins(&self, n_spins: u32) -> Result<Self> {
        Self::new(n_spins, self.amp_up, self.amp_down)
    }

    fn sum(&self) -> f64 {
        self.amp_up + self.amp_down
    }

    pub(crate) fn check_overlap(&self) -> Result<()> {
        let s = self.sum();
        if s.abs() <= 4.0 * f64::EPSILON * (self.amp_up.abs() + self.amp_down.abs()) {
            Err(Error::ZeroOverlap)
        } else {
            Ok(())
        }
    }
}

/// One eigenvalue of `v` with its postselected amplitude.
///
/// Amplitudes are real, so the weight is real; it is also kept as
/// `sign * exp(log_abs_weight)` because `weight` underflows for large `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySector {
    pub index: u32,
    pub eigenvalue: f64,
    pub weight: f64,
    pub log_abs_weight: f64,
    pub sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakValueReport {
    pub weak_velocity: f64,
    pub overlap_amplitude: f64,
    pub postselect_probability_static: f64,
    /// `ln |overlap|`, finite even when `overlap_amplitude` underflows.
    pub log_overlap: f64,
}

/// Sector eigenvalue `(2n - N)/N`.
#[must_use]
pub fn eigenvalue(n: u32, n_spins: u32) -> f64 {
    (2.0 * f64::from(n) - f64::from(n_spins)) / f64::from(n_spins)
}

/// `(amp_up - amp_down)/(amp_up + amp_down)`, independent of `N`.
pub fn weak_velocity(post: &CoinState) -> Result<f64> {
    post.check_overlap()?;
    Ok((post.amp_up - post.amp_down) / post.sum())
}

/// `<post|pre> = ((amp_up + amp_down)/sqrt 2)^N`. Underflows to zero for large
/// `N`; see [`log_overlap`].
#[must_use]
pub fn overlap(post: &CoinState) -> f64 {
    let r = post.sum() * std::f64::consts::FRAC_1_SQRT_2;
    r.powf(f64::from(post.n_spins))
}

/// `ln |<post|pre>|`.
#[must_use]
pub fn log_overlap(post: &CoinState) -> f64 {
    f64::from(post.n_spins) * (post.sum().abs() * std::f64::consts::FRAC_1_SQRT_2).ln()
}

/// Sign of the overlap.
#[must_use]
pub fn overlap_sign(post: &CoinState) -> f64 {
    if post.sum() < 0.0 && post.n_spins % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

pub fn weak_value_report(post: &CoinState) -> Result<WeakValueReport> {
    let w = weak_velocity(post)?;
    let n = f64::from(post.n_spins);
    Ok(WeakValueReport {
        weak_velocity: w,
        overlap_amplitude: overlap(post),
        postselect_probability_static: (0.5 + post.amp_up * post.amp_down).powf(n),
        log_overlap: log_overlap(post),
    })
}

/// `ln P_static = N ln(1/2 + amp_up amp_down)`.
#[must_use]
pub fn log_postselect_probability_static(post: &CoinState) -> f64 {
    f64::from(post.n_spins) * (0.5 + post.amp_up * post.amp_down).ln()
}

/// All `N + 1` sectors with weights `2^{-N/2} C(N,n) up^n down^{N-n}`.
#[must_use]
pub fn sector_decomposition(post: &CoinState) -> Vec<VelocitySector> {
    let n_spins = post.n_spins;
    let nn = u64::from(n_spins);
    let la = post.amp_up.abs().ln();
    let lb = post.amp_down.abs().ln();
    let half_ln2 = 0.5 * f64::from(n_spins) * std::f64::consts::LN_2;
    (0..=n_spins)
        .map(|n| {
            let k = u64::from(n);
            let up_pow = if n == 0 { 0.0 } else { k as f64 * la };
            let down_pow = if n == n_spins { 0.0 } else { (nn - k) as f64 * lb };
            let log_abs = ln_binomial(nn, k) - half_ln2 + up_pow + down_pow;
            let neg = (post.amp_up < 0.0 && n % 2 == 1) ^ (post.amp_down < 0.0 && (n_spins - n) % 2 == 1);
            let sign = if log_abs == f64::NEG_INFINITY {
                0
            } else if neg {
                -1
            } else {
                1
            };
            VelocitySector {
                index: n,
                eigenvalue: eigenvalue(n, n_spins),
                weight: f64::from(sign) * log_abs.exp(),
                log_abs_weight: log_abs,
                sign,
            }
        })
        .collect()
}

/// Born probabilities `C(N,n)/2^N` of the preselected state.
#[must_use]
pub fn born_probabilities(n_spins: u32) -> Vec<f64> {
    let nn = u64::from(n_spins);
    let l2 = f64::from(n_spins) * std::f64::consts::LN_2;
    (0..=nn).map(|k| (ln_binomial(nn, k) - l2).exp()).collect()
}

/// `<post| v^n e^{-i p v T} |pre>` next to its weak-value approximation
/// `<post|pre> w^n e^{-i p w T}`.
///
/// Both are also stored divided by the overlap (`*_ratio`), which stays
/// representable when the overlap itself underflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentElement {
    pub exact: Complex64,
    pub weak: Complex64,
    pub exact_ratio: Complex64,
    pub weak_ratio: Complex64,
    pub log_overlap: f64,
}

impl MomentElement {
    /// `|exact - weak| / |weak|`.
    #[must_use]
    pub fn relative_error(&self) -> f64 {
        let d = (self.exact_ratio - self.weak_ratio).norm();
        let s = self.weak_ratio.norm();
        if s == 0.0 {
            d
        } else {
            d / s
        }
    }
}

/// Largest supported moment order.
pub const MAX_MOMENT: u32 = 10;

/// Exact and weak moment elements for `n <= 10`.
///
/// The sector sum `sum_k w_k v_k^n e^{-i p v_k T}` cancels catastrophically
/// for `amp_up amp_down < 0`, so it is evaluated as the `n`-th derivative of
/// the product form `prod_i phi(x)`, `phi(x) = (up e^x + down e^{-x})/sqrt 2`,
/// whose Taylor coefficients are raised to the `N`-th power by the J.C.P.
/// Miller recurrence. Everything is normalized by the overlap on the way.
pub fn moment_element(post: &CoinState, n: u32, p: f64, t: f64) -> Result<MomentElement> {
    if n > MAX_MOMENT {
        return Err(Error::InvalidParameter(format!("moment order {n} exceeds {MAX_MOMENT}")));
    }
    let w = weak_velocity(post)?;
    let nn = f64::from(post.n_spins);
    let theta = p * t / nn;
    let (a, b) = (post.amp_up, post.amp_down);
    let s = post.sum();
    let ex = Complex64::from_polar(1.0, -theta);
    let ex_inv = ex.conj();
    let order = n as usize;
    // c_k = (a e^{x0} + (-1)^k b e^{-x0}) / ((a + b) k!)
    let mut c = Vec::with_capacity(order + 1);
    let mut fact = 1.0;
    for k in 0..=order {
        if k > 0 {
            fact *= k as f64;
        }
        let sgn = if k % 2 == 0 { 1.0 } else { -1.0 };
        c.push((ex * a + ex_inv * (sgn * b)) / (s * fact));
    }
    let c0 = c[0];
    let mut d = Vec::with_capacity(order + 1);
    d.push(generating_ratio(w, theta, post.n_spins));
    for k in 1..=order {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 1..=k {
            acc += c[j] * d[k - j] * ((nn + 1.0) * j as f64 - k as f64);
        }
        d.push(acc / (c0 * k as f64));
    }
    let mut nfact = 1.0;
    for k in 1..=order {
        nfact *= k as f64;
    }
    let exact_ratio = d[order] * (nfact / nn.powi(n as i32));
    let weak_ratio = Complex64::from_polar(w.powi(n as i32), -p * w * t);
    let ov = overlap(post);
    Ok(MomentElement {
        exact: exact_ratio * ov,
        weak: weak_ratio * ov,
        exact_ratio,
        weak_ratio,
        log_overlap: log_overlap(post),
    })
}

/// `(cos th - i w sin th)^N`, the generating function divided by the overlap.
pub(crate) fn generating_ratio(w: f64, theta: f64, n_spins: u32) -> Complex64 {
    generating_ratio_scaled(w, theta, n_spins, 0.0)
}

/// `generating_ratio * e^{log_shift}`, with the shift applied before
/// exponentiating so that a large power times a tiny weight stays finite.
pub(crate) fn generating_ratio_scaled(w: f64, theta: f64, n_spins: u32, log_shift: f64) -> Complex64 {
    let (s, c) = theta.sin_cos();
    let z = Complex64::new(c, -w * s);
    let nn = f64::from(n_spins);
    let log_mod = 0.5 * nn * z.norm_sqr().ln();
    Complex64::from_polar((log_mod + log_shift).exp(), nn * z.arg())
}

/// `2^{-N/2} (up e^{-i p T/N} + down e^{i p T/N})^N`.
#[must_use]
pub fn generating_function(post: &CoinState, p: f64, t: f64) -> Complex64 {
    let theta = p * t / f64::from(post.n_spins);
    let z = (Complex64::from_polar(post.amp_up, -theta) + Complex64::from_polar(post.amp_down, theta))
        * std::f64::consts::FRAC_1_SQRT_2;
    z.powf(f64::from(post.n_spins))
}

/// Samples velocity eigenvalues from the Born distribution of the
/// preselected state. Shards use seeds derived from `seed`, so the output
/// does not depend on the thread count.
#[must_use]
pub fn born_sample(n_spins: u32, seed: u64, count: usize) -> Vec<f64> {
    let n_spins = n_spins.max(1);
    let dist = Binomial::new(u64::from(n_spins), 0.5).expect("p = 1/2 is valid");
    let shards = count.div_ceil(rng::SHARD_LEN);
    let mut out: Vec<Vec<f64>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::shard_rng(seed, s as u64);
            let len = rng::SHARD_LEN.min(count - s * rng::SHARD_LEN);
            (0..len).map(|_| eigenvalue(dist.sample(&mut r) as u32, n_spins)).collect()
        })
        .collect();
    let mut flat = Vec::with_capacity(count);
    for v in out.iter_mut() {
        flat.append(v);
    }
    flat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mp;
    use rug::Float;

    fn post(n: u32) -> CoinState {
        CoinState::new(n, 0.8, -0.6).unwrap()
    }

    #[test]
    fn rejects_bad_states() {
        assert!(CoinState::new(0, 1.0, 0.0).is_err());
        assert!(CoinState::new(3, 0.8, 0.8).is_err());
        assert!(CoinState::new(3, 0.6, 0.8).is_ok());
    }

    #[test]
    fn weak_velocity_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(weak_velocity(&CoinState::new(10, h, h).unwrap()).unwrap(), 0.0);
        assert_eq!(weak_velocity(&CoinState::new(10, 1.0, 0.0).unwrap()).unwrap(), 1.0);
        assert!((weak_velocity(&post(100)).unwrap() - 7.0).abs() < 1e-14);
        let orth = CoinState::new(4, h, -h).unwrap();
        assert_eq!(weak_velocity(&orth), Err(Error::ZeroOverlap));
    }

    #[test]
    fn weak_velocity_is_weighted_sector_mean() {
        // multiprecision brute force: sum w_n v_n / sum w_n
        let p = post(100);
        let prec = mp::sum_precision(0.8, -0.6, 100);
        let w = mp::binomial_weights(0.8, -0.6, 100, prec);
        let mut num = Float::with_val(prec, 0);
        let mut den = Float::with_val(prec, 0);
        for (k, x) in w.iter().enumerate() {
            num += Float::with_val(prec, x * (2 * k as i64 - 100)) / 100;
            den += x;
        }
        let mean = (num / den).to_f64();
        assert!((mean - weak_velocity(&p).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn sectors_for_two_spins() {
        let s = sector_decomposition(&CoinState::preselected(2));
        let ev: Vec<f64> = s.iter().map(|x| x.eigenvalue).collect();
        assert_eq!(ev, vec![-1.0, 0.0, 1.0]);
        let w: Vec<f64> = s.iter().map(|x| x.weight).collect();
        for (x, y) in w.iter().zip([0.25, 0.5, 0.25]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn eigenstate_has_single_sector() {
        let s = sector_decomposition(&CoinState::new(1, 1.0, 0.0).unwrap());
        assert_eq!(s[0].weight, 0.0);
        assert_eq!(s[0].sign, 0);
        assert!((s[1].weight - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(s[1].eigenvalue, 1.0);
    }

    #[test]
    fn overlap_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((overlap(&CoinState::preselected(37)) - 1.0).abs() < 1e-13);
        assert_eq!(overlap(&CoinState::new(5, h, -h).unwrap()), 0.0);
        let ov = overlap(&post(100));
        let expect = (0.2 / 2f64.sqrt()).powi(100);
        assert!((ov / expect - 1.0).abs() < 1e-12);
        assert!((ov.log10() + 85.0).abs() < 1.0);
        assert!((log_overlap(&post(100)) - ov.ln()).abs() < 1e-10);
    }

    #[test]
    fn static_probability() {
        let r = weak_value_report(&post(100)).unwrap();
        let lp = log_postselect_probability_static(&post(100));
        assert!((lp - 100.0 * 0.02f64.ln()).abs() < 1e-9);
        // 0.02^100 = 2^100 1e-200, about 1.27e-170
        assert!((r.postselect_probability_static / 1.2676506002282294e-170 - 1.0).abs() < 1e-9);
        assert!((r.postselect_probability_static - r.overlap_amplitude.powi(2)).abs() < 1e-180);
    }

    fn mp_moment(a: f64, b: f64, n_spins: u32, n: u32, p: f64, t: f64) -> Complex64 {
        // brute-force sector sum, normalized by the overlap
        let prec = mp::sum_precision(a, b, n_spins) + 64;
        let w = mp::binomial_weights(a, b, n_spins, prec);
        let mut re = Float::with_val(prec, 0);
        let mut im = Float::with_val(prec, 0);
        for (k, x) in w.iter().enumerate() {
            let v = Float::with_val(prec, 2 * k as i64 - i64::from(n_spins)) / n_spins;
            let mut term = Float::with_val(prec, x * &v.clone().pow(n as i32));
            let phase = -Float::with_val(prec, &v * Float::with_val(prec, p * t));
            let (s, c) = phase.sin_cos(Float::new(prec));
            let tr = Float::with_val(prec, &term * &c);
            term *= &s;
            re += tr;
            im += term;
        }
        let ov = mp::overlap(a, b, n_spins, prec);
        Complex64::new((re / &ov).to_f64(), (im / &ov).to_f64())
    }

    use rug::ops::Pow;

    #[test]
    fn moments_match_multiprecision_sector_sum() {
        for &(a, b) in &[(0.8, -0.6), (0.6, 0.8), (0.3, -0.9539392014169456)] {
            for &ns in &[7u32, 50, 200] {
                let c = CoinState::normalized(ns, a, b).unwrap();
                for n in [0u32, 1, 2, 3, 5, 10] {
                    for &pt in &[0.0, 0.7, 2.0] {
                        let m = moment_element(&c, n, pt, 1.0).unwrap();
                        let o = mp_moment(c.amp_up(), c.amp_down(), ns, n, pt, 1.0);
                        let err = (m.exact_ratio - o).norm() / o.norm().max(1e-300);
                        assert!(err < 1e-9, "a={a} N={ns} n={n} pT={pt}: {} vs {o} ({err})", m.exact_ratio);
                    }
                }
            }
        }
    }

    #[test]
    fn moment_identities() {
        let c = post(40);
        let m0 = moment_element(&c, 0, 0.0, 3.0).unwrap();
        assert_eq!(m0.exact_ratio, Complex64::new(1.0, 0.0));
        let m1 = moment_element(&c, 1, 0.0, 3.0).unwrap();
        assert!((m1.exact_ratio.re - 7.0).abs() < 1e-13 && m1.exact_ratio.im.abs() < 1e-13);
        assert!(moment_element(&c, 11, 0.0, 1.0).is_err());
    }

    #[test]
    fn second_moment_error_decreases_with_n() {
        let errs: Vec<f64> = [25, 50, 100, 200]
            .iter()
            .map(|&n| moment_element(&post(n), 2, 1.0, 1.0).unwrap().relative_error())
            .collect();
        assert!(errs.windows(2).all(|p| p[1] < p[0]), "{errs:?}");
    }

    #[test]
    fn zeroth_moment_is_generating_function() {
        let c = CoinState::new(30, 0.6, 0.8).unwrap();
        for &p in &[0.0, 0.5, 2.0, -1.3] {
            let m = moment_element(&c, 0, p, 1.7).unwrap();
            let g = generating_function(&c, p, 1.7);
            assert!((m.exact - g).norm() < 1e-12 * g.norm().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn born_sample_single_coin() {
        let s = born_sample(1, 7, 20_000);
        assert!(s.iter().all(|&v| v == 1.0 || v == -1.0));
        let up = s.iter().filter(|&&v| v > 0.0).count() as f64 / 20_000.0;
        assert!((up - 0.5).abs() < 3.0 * (0.25f64 / 20_000.0).sqrt());
    }

    #[test]
    fn born_sample_is_deterministic() {
        assert_eq!(born_sample(50, 11, 30_000), born_sample(50, 11, 30_000));
        assert_ne!(born_sample(50, 11, 1000), born_sample(50, 12, 1000));
    }
}
