//! Multiprecision helpers for sector sums that cancel far below double
//! precision. A postselected sum over `N+1` binomial sectors can be smaller
//! than its largest term by a factor `((|a|+|b|)/|a+b|)^N`, so every term is
//! carried with enough bits to absorb that loss.

use rug::integer::Order;
use rug::{Float, Integer};

/// Bits needed so that a sector sum with amplitudes `(a, b)` keeps about
/// 64 significant bits after cancellation.
pub(crate) fn sum_precision(a: f64, b: f64, n: u32) -> u32 {
    let s = a + b;
    let loss = if s == 0.0 {
        0.0
    } else {
        f64::from(n) * ((a.abs() + b.abs()) / s.abs()).log2()
    };
    let guard = 2.0 * f64::from(n + 1).log2() + 96.0;
    (loss.max(0.0) + guard).ceil() as u32
}

/// Bits for a double sector sum (inner products), where the loss doubles.
#[cfg(test)]
pub(crate) fn product_precision(a: f64, b: f64, n: u32) -> u32 {
    2 * sum_precision(a, b, n)
}

/// Sector weights `2^{-N/2} C(N,k) a^k b^{N-k}` for `k = 0..=N`, exact up to
/// the working precision.
pub(crate) fn binomial_weights(a: f64, b: f64, n: u32, prec: u32) -> Vec<Float> {
    let len = n as usize + 1;
    let mut pow_a = Vec::with_capacity(len);
    let mut pow_b = Vec::with_capacity(len);
    let fa = Float::with_val(prec, a);
    let fb = Float::with_val(prec, b);
    let mut pa = Float::with_val(prec, 1);
    let mut pb = Float::with_val(prec, 1);
    for _ in 0..len {
        pow_a.push(pa.clone());
        pow_b.push(pb.clone());
        pa *= &fa;
        pb *= &fb;
    }
    // 2^{-N/2}: exact shift for even N, times 1/sqrt(2) for odd N.
    let mut scale = Float::with_val(prec, 1);
    scale >>= n / 2;
    if n % 2 == 1 {
        scale /= Float::with_val(prec, 2).sqrt();
    }
    let mut c = Integer::from(1);
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        let mut w = Float::with_val(prec, &c);
        w *= &pow_a[k];
        w *= &pow_b[len - 1 - k];
        w *= &scale;
        out.push(w);
        if k < len - 1 {
            c *= n as usize - k;
            c /= k + 1;
        }
    }
    out
}

/// Overlap `((a+b)/sqrt 2)^N` at the working precision.
pub(crate) fn overlap(a: f64, b: f64, n: u32, prec: u32) -> Float {
    let s = Float::with_val(prec, a) + b;
    let r = s / Float::with_val(prec, 2).sqrt();
    use rug::ops::Pow;
    r.pow(n)
}

/// Sector-sum evaluator for Gaussians displaced on the lattice
/// `d_k = d_0 + k delta`.
///
/// `G(u0 - k delta) = e^{-u0^2/2e^2} beta^k q^{k^2}` with `beta = e^{u0 delta/e^2}`
/// and `q = e^{-delta^2/2e^2}`, so a point evaluation is one Horner pass over
/// the precomputed `c_k = w_k q^{k^2}`.
pub(crate) struct GaussianLattice {
    prec: u32,
    coeffs: Vec<Float>,
    d0: Float,
    delta: Float,
    inv_two_eps2: Float,
    delta_over_eps2: Float,
}

impl GaussianLattice {
    /// `weights[k]` multiplies a Gaussian of width `eps` centred at
    /// `d0 + k delta`, with `delta = span / intervals` formed exactly.
    pub(crate) fn new(weights: Vec<Float>, d0: f64, span: f64, intervals: u32, eps: f64, prec: u32) -> Self {
        let d0 = Float::with_val(prec, d0);
        let delta = if intervals == 0 {
            Float::with_val(prec, 0)
        } else {
            Float::with_val(prec, span) / intervals
        };
        let eps2 = Float::with_val(prec, eps) * eps;
        let inv_two_eps2 = Float::with_val(prec, 1) / (Float::with_val(prec, 2) * &eps2);
        let delta_over_eps2 = Float::with_val(prec, &delta / &eps2);
        // q^{k^2} by the recurrence q^{(k+1)^2} = q^{k^2} q^{2k+1}.
        let q = (-(Float::with_val(prec, &delta * &delta) * &inv_two_eps2)).exp();
        let q2 = Float::with_val(prec, &q * &q);
        let mut qk2 = Float::with_val(prec, 1);
        let mut q_odd = q;
        let mut coeffs = weights;
        for c in coeffs.iter_mut() {
            *c *= &qk2;
            qk2 *= &q_odd;
            q_odd *= &q2;
        }
        Self { prec, coeffs, d0, delta, inv_two_eps2, delta_over_eps2 }
    }

    pub(crate) fn prec(&self) -> u32 {
        self.prec
    }

    /// `sum_k w_k G(z - d_k)` over `k in lo..=hi` with unit-peak Gaussians.
    pub(crate) fn eval_range(&self, z: f64, lo: usize, hi: usize) -> Float {
        let prec = self.prec;
        if lo > hi || lo >= self.coeffs.len() {
            return Float::with_val(prec, 0);
        }
        let hi = hi.min(self.coeffs.len() - 1);
        let u0 = Float::with_val(prec, z) - &self.d0;
        let beta = Float::with_val(prec, &u0 * &self.delta_over_eps2).exp();
        let mut acc = Float::with_val(prec, 0);
        for c in self.coeffs[lo..=hi].iter().rev() {
            acc *= &beta;
            acc += c;
        }
        // Remaining factor beta^lo e^{-u0^2/2e^2} = e^{-(u0 - lo delta)^2/2e^2} / q^{lo^2}.
        let mut shift = Float::with_val(prec, &self.delta * lo as u64);
        shift = Float::with_val(prec, &u0 - &shift);
        let mut expo = Float::with_val(prec, &shift * &shift);
        expo *= &self.inv_two_eps2;
        let lo2 = Float::with_val(prec, &self.delta * lo as u64);
        let mut qlo = Float::with_val(prec, &lo2 * &lo2);
        qlo *= &self.inv_two_eps2;
        expo = qlo - expo;
        acc *= expo.exp();
        acc
    }

    pub(crate) fn eval(&self, z: f64) -> Float {
        self.eval_range(z, 0, self.coeffs.len() - 1)
    }

    /// Indices `k` with `|z - d_k| <= half_width`, computed at full precision.
    pub(crate) fn window(&self, z: f64, half_width: f64) -> Option<(usize, usize)> {
        let prec = self.prec;
        let n = self.coeffs.len() - 1;
        if self.delta.is_zero() {
            let u = Float::with_val(prec, z) - &self.d0;
            return if u.abs() <= half_width { Some((0, n)) } else { None };
        }
        let u0 = Float::with_val(prec, z) - &self.d0;
        // k delta in [u0 - hw, u0 + hw]
        let lo = (Float::with_val(prec, &u0 - half_width) / &self.delta).ceil();
        let hi = (Float::with_val(prec, &u0 + half_width) / &self.delta).floor();
        let lo = lo.to_f64().max(0.0);
        let hi = hi.to_f64().min(n as f64);
        if lo > hi {
            None
        } else {
            Some((lo as usize, hi as usize))
        }
    }
}

/// Complex number with multiprecision parts.
#[derive(Clone, Debug)]
pub(crate) struct BigComplex {
    pub re: Float,
    pub im: Float,
}

impl BigComplex {
    pub(crate) fn zero(prec: u32) -> Self {
        Self { re: Float::with_val(prec, 0), im: Float::with_val(prec, 0) }
    }

    /// `e^{i phi}` at the given precision.
    pub(crate) fn cis(phi: &Float) -> Self {
        let (s, c) = phi.clone().sin_cos(Float::new(phi.prec()));
        Self { re: c, im: s }
    }

    pub(crate) fn scale(&mut self, r: &Float) {
        self.re *= r;
        self.im *= r;
    }

    pub(crate) fn to_c64(&self, scale: &Float) -> num_complex::Complex64 {
        let p = self.re.prec();
        num_complex::Complex64::new(
            Float::with_val(p, &self.re / scale).to_f64(),
            Float::with_val(p, &self.im / scale).to_f64(),
        )
    }
}

/// `trunc(x 2^shift)` as an integer.
pub(crate) fn to_fixed(x: &Float, shift: i32) -> Integer {
    let mut y = x.clone();
    if shift >= 0 {
        y <<= shift as u32;
    } else {
        y >>= (-shift) as u32;
    }
    y.trunc().to_integer().unwrap_or_default()
}

/// Signed integers packed at `slot_limbs` 64-bit limbs apiece, value
/// `sum_k v_k 2^{64 slot_limbs k}`. Each `|v_k|` must fit in one slot.
pub(crate) fn pack_signed(values: &[Integer], slot_limbs: usize) -> Integer {
    let total = values.len() * slot_limbs;
    let mut pos = vec![0u64; total];
    let mut neg = vec![0u64; total];
    let mut any_neg = false;
    for (k, v) in values.iter().enumerate() {
        let digits = v.to_digits::<u64>(Order::Lsf);
        debug_assert!(digits.len() <= slot_limbs);
        let dst = if v.cmp0() == std::cmp::Ordering::Less {
            any_neg = true;
            &mut neg
        } else {
            &mut pos
        };
        dst[k * slot_limbs..k * slot_limbs + digits.len()].copy_from_slice(&digits);
    }
    let p = Integer::from_digits(&pos, Order::Lsf);
    if any_neg {
        p - Integer::from_digits(&neg, Order::Lsf)
    } else {
        p
    }
}

/// Reads back signed slot coefficients `first..first + count` of an integer
/// built as `sum_k c_k 2^{64 slot_limbs k}` with `|c_k| < 2^{64 slot_limbs - 1}`.
pub(crate) fn unpack_signed(z: &Integer, slot_limbs: usize, first: usize, count: usize) -> Vec<Integer> {
    let negative = z.cmp0() == std::cmp::Ordering::Less;
    let digits = z.to_digits::<u64>(Order::Lsf);
    let limb = |idx: usize| digits.get(idx).copied().unwrap_or(0);
    let mut out = Vec::with_capacity(count);
    let mut carry = 0u64;
    let slot_bits = 64 * slot_limbs as u32;
    for slot in 0..first + count {
        let base = slot * slot_limbs;
        let top = limb(base + slot_limbs - 1);
        // raw + carry >= 2^{S-1}?
        let high = top >> 63 == 1
            || (carry == 1
                && top == u64::MAX >> 1
                && (0..slot_limbs - 1).all(|t| limb(base + t) == u64::MAX));
        if slot >= first {
            let lo = base.min(digits.len());
            let hi = (base + slot_limbs).min(digits.len());
            let mut c = Integer::from_digits(&digits[lo..hi], Order::Lsf);
            c += carry;
            if high {
                c -= Integer::from(1) << slot_bits;
            }
            if negative {
                c = -c;
            }
            out.push(c);
        }
        carry = u64::from(high);
    }
    out
}
