//! Ensemble statistics: how rare postselection is compared with the error it
//! is supposed to beat, and Monte Carlo displacement histograms with and
//! without postselection.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as NormalDist};

use crate::coin::{self, CoinState};
use crate::error::{Error, Result};
use crate::rng;
use crate::wavepacket::{self, GaussianPacket};

/// Linear probabilities below `e^{-700}` are reported as zero.
pub const LOG_UNDERFLOW: f64 = -700.0;

/// Points of the inverse-CDF grid for postselected sampling.
pub const CDF_GRID_POINTS: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub coin_post: CoinState,
    pub epsilon: f64,
    pub t: f64,
    pub trials: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(coin_post: CoinState, epsilon: f64, t: f64, trials: usize, seed: u64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("t must be non-negative, got {t}")));
        }
        if trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        Ok(Self { coin_post, epsilon, t, trials, seed })
    }

    fn packet(&self) -> GaussianPacket {
        GaussianPacket::centered(self.epsilon).expect("epsilon validated")
    }
}

fn linear(log_p: f64) -> f64 {
    if log_p < LOG_UNDERFLOW {
        0.0
    } else {
        log_p.exp()
    }
}

/// Probabilities of a wrong-looking displacement and of postselection, in
/// linear and natural-log form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityLedger {
    pub p_error_analytic: f64,
    pub p_postselect_static: f64,
    pub p_postselect_evolved: f64,
    pub floor_e_minus_n: f64,
    pub log_p_error: f64,
    pub log_p_postselect_static: f64,
    pub log_p_postselect_evolved: f64,
    pub log_floor: f64,
}

impl ProbabilityLedger {
    /// `p_error > p_postselect_static`, decided in log space.
    #[must_use]
    pub fn error_exceeds_postselection(&self) -> bool {
        self.log_p_error > self.log_p_postselect_static
    }

    /// `p_error > e^{-N}`, decided in log space.
    #[must_use]
    pub fn error_exceeds_floor(&self) -> bool {
        self.log_p_error > self.log_floor
    }
}

/// `p_error = exp(-w^2 t^2 / e^2)` (unit prefactor), `(1/2 + up down)^N`,
/// the norm of the evolved postselected packet, and `e^{-N}`.
pub fn probability_ledger(config: &ExperimentConfig) -> Result<ProbabilityLedger> {
    let post = &config.coin_post;
    let w = coin::weak_velocity(post)?;
    let wt = w * config.t / config.epsilon;
    let log_p_error = -wt * wt;
    let log_static = coin::log_postselect_probability_static(post);
    let evolved = wavepacket::evolve_exact(&config.packet(), post, config.t)?;
    let log_evolved = evolved.log_norm_sqr();
    let log_floor = -f64::from(post.n_spins());
    Ok(ProbabilityLedger {
        p_error_analytic: linear(log_p_error),
        p_postselect_static: linear(log_static),
        p_postselect_evolved: linear(log_evolved),
        floor_e_minus_n: linear(log_floor),
        log_p_error,
        log_p_postselect_static: log_static,
        log_p_postselect_evolved: log_evolved,
        log_floor,
    })
}

/// Fixed-range histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Samples that fell outside `[lo, hi)`.
    pub outside: u64,
}

impl Histogram {
    #[must_use]
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self { lo, hi, counts: vec![0; bins.max(1)], outside: 0 }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }

    pub fn add(&mut self, x: f64) {
        let f = (x - self.lo) / self.bin_width();
        if f >= 0.0 && f < self.counts.len() as f64 {
            self.counts[f as usize] += 1;
        } else {
            self.outside += 1;
        }
    }

    /// Associative merge of two histograms over the same bins.
    pub fn merge(&mut self, other: &Histogram) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.outside += other.outside;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.outside
    }

    /// `count / (total * bin_width)`.
    pub fn density(&self, i: usize) -> f64 {
        self.counts[i] as f64 / (self.total() as f64 * self.bin_width())
    }

    /// CSV with columns `bin_left,bin_right,count,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_left,bin_right,count,density")?;
        for i in 0..self.counts.len() {
            let (l, r) = self.edges(i);
            writeln!(out, "{l:.12e},{r:.12e},{},{:.12e}", self.counts[i], self.density(i))?;
        }
        Ok(())
    }
}

/// Histogram plus summary moments of sampled positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSample {
    pub histogram: Histogram,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Standard deviation predicted without postselection,
    /// `sqrt(t^2/N + e^2/2)`.
    pub predicted_std: f64,
}

/// Samples displacements `z` of the particle.
///
/// Without postselection a sector is drawn from the Born weights and `z`
/// from `|Phi(z - v_n t)|^2`, a normal law of deviation `e/sqrt 2`. With
/// postselection `z` is drawn from the normalized `|psi(z)|^2` of the exact
/// evolution by inverse CDF on [`CDF_GRID_POINTS`] points.
pub fn sample_displacements(config: &ExperimentConfig, postselect: bool, bins: usize) -> Result<DisplacementSample> {
    let n = config.coin_post.n_spins();
    let eps = config.epsilon;
    let t = config.t;
    let predicted_std = (t * t / f64::from(n) + eps * eps / 2.0).sqrt();
    if postselect {
        let cdf = PostselectedCdf::new(config)?;
        let (lo, hi) = (cdf.lo(), cdf.hi());
        let (hist, s1, s2) = run_shards(config, bins, lo, hi, |r| cdf.sample(r.random::<f64>()));
        Ok(finish(hist, s1, s2, config.trials, predicted_std))
    } else {
        let born = Binomial::new(u64::from(n), 0.5).expect("p = 1/2 is valid");
        let spread = Normal::new(0.0, eps * std::f64::consts::FRAC_1_SQRT_2).expect("positive deviation");
        let reach = t + 8.0 * eps;
        let (hist, s1, s2) = run_shards(config, bins, -reach, reach, |r| {
            let v = coin::eigenvalue(born.sample(r) as u32, n);
            v * t + spread.sample(r)
        });
        Ok(finish(hist, s1, s2, config.trials, predicted_std))
    }
}

fn run_shards(
    config: &ExperimentConfig,
    bins: usize,
    lo: f64,
    hi: f64,
    draw: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
) -> (Histogram, f64, f64) {
    let shards = config.trials.div_ceil(rng::SHARD_LEN);
    let parts: Vec<(Histogram, f64, f64)> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::shard_rng(config.seed, s as u64);
            let len = rng::SHARD_LEN.min(config.trials - s * rng::SHARD_LEN);
            let mut h = Histogram::new(lo, hi, bins);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                let z = draw(&mut r);
                h.add(z);
                s1 += z;
                s2 += z * z;
            }
            (h, s1, s2)
        })
        .collect();
    // merge in shard order so sums are reproducible
    let mut hist = Histogram::new(lo, hi, bins);
    let (mut s1, mut s2) = (0.0, 0.0);
    for (h, a, b) in &parts {
        hist.merge(h);
        s1 += a;
        s2 += b;
    }
    (hist, s1, s2)
}

fn finish(histogram: Histogram, s1: f64, s2: f64, count: usize, predicted_std: f64) -> DisplacementSample {
    let n = count as f64;
    let mean = s1 / n;
    let var = if count > 1 { (s2 - n * mean * mean) / (n - 1.0) } else { 0.0 };
    DisplacementSample { histogram, mean, std: var.max(0.0).sqrt(), count, predicted_std }
}

/// Tabulated CDF of the normalized postselected density.
pub struct PostselectedCdf {
    z0: f64,
    dz: f64,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl PostselectedCdf {
    /// Grid over `[min(-t, wt) - 8e, max(t, wt) + 8e]`.
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let post = &config.coin_post;
        let w = coin::weak_velocity(post)?;
        let (t, eps) = (config.t, config.epsilon);
        let lo = (-t).min(w * t) - 8.0 * eps;
        let hi = t.max(w * t) + 8.0 * eps;
        let dz = (hi - lo) / (CDF_GRID_POINTS - 1) as f64;
        let limit = eps / 8.0;
        if dz > limit {
            return Err(Error::GridTooCoarse { spacing: dz, limit });
        }
        let psi = wavepacket::evolve_exact(&config.packet(), post, t)?;
        let amp = psi.amplitudes_on_grid(lo, dz, CDF_GRID_POINTS);
        let density: Vec<f64> = amp.iter().map(|a| a.norm_sqr()).collect();
        let mut cdf = Vec::with_capacity(CDF_GRID_POINTS);
        cdf.push(0.0);
        for j in 1..CDF_GRID_POINTS {
            let prev = cdf[j - 1];
            cdf.push(prev + 0.5 * (density[j - 1] + density[j]) * dz);
        }
        let total = *cdf.last().expect("non-empty grid");
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroNorm);
        }
        for c in cdf.iter_mut() {
            *c /= total;
        }
        let density = density.into_iter().map(|d| d / total).collect();
        Ok(Self { z0: lo, dz, density, cdf })
    }

    pub fn lo(&self) -> f64 {
        self.z0
    }

    pub fn hi(&self) -> f64 {
        self.z0 + self.dz * (self.cdf.len() - 1) as f64
    }

    /// Normalized density at grid point `j`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Inverse CDF, piecewise linear in each cell.
    pub fn sample(&self, u: f64) -> f64 {
        let j = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.z0 + self.dz * ((j - 1) as f64 + f)
    }

    /// Probability mass in `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.cdf_at(b) - self.cdf_at(a)
    }

    fn cdf_at(&self, z: f64) -> f64 {
        let x = (z - self.z0) / self.dz;
        if x <= 0.0 {
            return 0.0;
        }
        let last = self.cdf.len() - 1;
        if x >= last as f64 {
            return 1.0;
        }
        let j = x as usize;
        let f = x - j as f64;
        self.cdf[j] + f * (self.cdf[j + 1] - self.cdf[j])
    }
}

/// Bin probabilities of the no-postselection law: Born mixture of normals
/// centred at `v_n t` with deviation `e/sqrt 2`.
#[must_use]
pub fn mixture_bin_probabilities(hist: &Histogram, n_spins: u32, t: f64, eps: f64) -> Vec<f64> {
    let born = coin::born_probabilities(n_spins);
    let normal = NormalDist::new(0.0, eps * std::f64::consts::FRAC_1_SQRT_2).expect("positive deviation");
    (0..hist.counts.len())
        .map(|i| {
            let (l, r) = hist.edges(i);
            born.iter()
                .enumerate()
                .map(|(k, p)| {
                    let c = coin::eigenvalue(k as u32, n_spins) * t;
                    p * (normal.cdf(r - c) - normal.cdf(l - c))
                })
                .sum()
        })
        .collect()
}

/// Bin probabilities of the postselected density.
#[must_use]
pub fn postselected_bin_probabilities(hist: &Histogram, cdf: &PostselectedCdf) -> Vec<f64> {
    (0..hist.counts.len())
        .map(|i| {
            let (l, r) = hist.edges(i);
            cdf.mass(l, r)
        })
        .collect()
}

/// Pearson chi-square goodness of fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square test of `hist` against bin probabilities `probs`. Adjacent
/// bins are pooled until each expects at least 5 counts; the mass outside
/// the histogram range forms one more cell.
#[must_use]
pub fn chi_square(hist: &Histogram, probs: &[f64]) -> ChiSquare {
    let total = hist.total() as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in hist.counts.iter().zip(probs) {
        o += *c as f64;
        e += p * total;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    let outside_p = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    let outside_e = outside_p * total;
    if outside_e >= 5.0 {
        cells.push((hist.outside as f64, outside_e));
    } else if let Some(last) = cells.last_mut() {
        last.0 += hist.outside as f64;
        last.1 += outside_e;
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64).map(|d| 1.0 - d.cdf(statistic)).unwrap_or(f64::NAN);
    ChiSquare { statistic, dof, p_value }
}
