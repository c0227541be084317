//! Monte Carlo summaries and a few sample statistics used by the checks.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Sample mean with its standard error and 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub ci95: f64,
    pub n: usize,
}

impl MonteCarloEstimate {
    /// Summarises i.i.d. samples. A single sample has zero standard error.
    pub fn from_samples(samples: &[f64]) -> Result<Self, SimError> {
        let n = samples.len();
        if n == 0 {
            return Err(SimError::EmptyBundle);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self::new(mean, std_err, n))
    }

    pub fn new(mean: f64, std_err: f64, n: usize) -> Self {
        Self { mean, std_err, ci95: Z95 * std_err, n }
    }

    /// An exact value carried as an estimate.
    pub fn exact(value: f64) -> Self {
        Self::new(value, 0.0, 1)
    }

    /// True when `target` lies within `k` standard errors of the mean.
    /// Deterministic estimates compare with a small absolute tolerance.
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_err + 1e-12 * (1.0 + target.abs())
    }

    pub fn lower95(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper95(&self) -> f64 {
        self.mean + self.ci95
    }

    /// True when the 95% intervals of the two estimates are disjoint.
    pub fn separated_from(&self, other: &Self) -> bool {
        self.upper95() < other.lower95() || other.upper95() < self.lower95()
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_se(&self, other: &Self) -> f64 {
        self.std_err.hypot(other.std_err)
    }
}

/// Sample skewness with its large-sample standard error `sqrt(6/n)`.
pub fn skewness(samples: &[f64]) -> Option<(f64, f64)> {
    let n = samples.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let m2 = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = samples.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return Some((0.0, 0.0));
    }
    Some((m3 / m2.powf(1.5), (6.0 / nf).sqrt()))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_zero_error() {
        let e = MonteCarloEstimate::from_samples(&[9.0; 10]).unwrap();
        assert_eq!(e.mean, 9.0);
        assert_eq!(e.std_err, 0.0);
        assert_eq!(e.ci95, 0.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(MonteCarloEstimate::from_samples(&[]), Err(SimError::EmptyBundle)));
    }

    #[test]
    fn ci_is_z_times_se() {
        let e = MonteCarloEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((e.ci95 - 1.96 * e.std_err).abs() < 1e-15);
        // var = 5/3, se = sqrt(5/12)
        assert!((e.std_err - (5.0f64 / 12.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
    }

    #[test]
    fn ks_critical_value_matches_table() {
        // c(0.01) = 1.628
        let v = ks_critical_value(10_000, 10_000, 0.01);
        assert!((v - 1.6276 * (2.0f64 / 10_000.0).sqrt()).abs() < 1e-4);
    }
}
