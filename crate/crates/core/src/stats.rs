//! Empirical CDFs, Kolmogorov-Smirnov tests, the Gumbel and normal laws, and
//! a Pearson chi-square test with fixed cell probabilities.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::rng;

/// Asymptotic 5% Kolmogorov critical coefficient.
pub const KS_COEF_005: f64 = 1.358;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    Empty,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("chi-square input mismatch: {0}")]
    ChiSquare(String),
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self, StatsError> {
        Ok(Self {
            sorted: sorted(samples)?,
        })
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Lower empirical quantile, `q` in `[0, 1]`.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.sorted[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n_eff: f64,
    pub critical_005: f64,
    pub pass: bool,
}

impl KsResult {
    fn new(statistic: f64, n_eff: f64) -> Self {
        let critical_005 = KS_COEF_005 / n_eff.sqrt();
        Self {
            statistic,
            n_eff,
            critical_005,
            pass: statistic < critical_005,
        }
    }
}

/// One-sample KS statistic against `cdf`; needs at least 10 samples.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult, StatsError> {
    if samples.len() < 10 {
        return Err(if samples.is_empty() {
            StatsError::Empty
        } else {
            StatsError::TooFew { needed: 10, got: samples.len() }
        });
    }
    let xs = sorted(samples)?;
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        // Group ties: the ECDF jumps from i/n to j/n at xs[i].
        let mut j = i + 1;
        while j < xs.len() && xs[j] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i]);
        d = d.max(j as f64 / n - f).max(f - i as f64 / n);
        i = j;
    }
    Ok(KsResult::new(d.clamp(0.0, 1.0), n))
}

/// Two-sample KS statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    let xa = sorted(a)?;
    let xb = sorted(b)?;
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    Ok(KsResult::new(d, n_eff))
}

/// Standard Gumbel CDF `exp(-exp(-x))`.
pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// Standard Gumbel draw by inversion, `-ln(-ln U)`.
pub fn gumbel_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(-rng::open01(rng).ln()).ln()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal draw (Box-Muller, one of the pair).
pub fn normal_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = rng::open01(rng);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
}

/// Pearson goodness of fit with fully specified cell probabilities
/// (degrees of freedom = cells - 1).
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquareResult, StatsError> {
    if observed.len() != probs.len() || observed.len() < 2 {
        return Err(StatsError::ChiSquare(format!(
            "{} observed cells vs {} probabilities",
            observed.len(),
            probs.len()
        )));
    }
    let psum: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(p > 0.0)) || (psum - 1.0).abs() > 1e-9 {
        return Err(StatsError::ChiSquare("probabilities must be positive and sum to 1".into()));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(StatsError::Empty);
    }
    let expected: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let statistic = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = observed.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: dist.sf(statistic),
        observed: observed.to_vec(),
        expected,
    })
}

/// KS distance between integer data and `N(mean, variance)` on the integer
/// lattice, with a half-unit continuity correction.
pub fn lattice_normal_ks(values: &[u64], mean: f64, variance: f64) -> f64 {
    let mut h = values.to_vec();
    h.sort_unstable();
    let m = h.len() as f64;
    let sd = variance.sqrt();
    let mut sup: f64 = 0.0;
    let mut i = 0;
    while i < h.len() {
        let k = h[i] as f64;
        let below = normal_cdf((k - 0.5 - mean) / sd);
        sup = sup.max((i as f64 / m - below).abs());
        while i < h.len() && h[i] as f64 == k {
            i += 1;
        }
        let at = normal_cdf((k + 0.5 - mean) / sd);
        sup = sup.max((i as f64 / m - at).abs());
    }
    sup
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
