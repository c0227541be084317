//! Density bound and last-jump-gap diagnostics.
//!
//! For a uniformly elliptic one-dimensional diffusion the transition density
//! satisfies `sup_y ρ_t(y) ≤ C_T / √t`; [`density_sup_scan`] estimates
//! `√t · sup_y ρ̂_t(y)` from simulated snapshots. Conditionally on `N_t = n`
//! the last jump epoch is the maximum of `n` uniforms on `(0, t)`, so
//! `E[(t - τ_n)^{-1/2} | N_t = n] = n B(n, ½) / √t`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::SimError;
use crate::quad;
use crate::rng::substream;
use crate::sim::{PathBundle, StateSnapshots};
use crate::stats::MonteCarloEstimate;

/// `B(n, ½)` by `B(1, ½) = 2`, `B(n+1, ½) = B(n, ½) · n / (n + ½)`.
pub fn beta_half(n: u32) -> f64 {
    assert!(n >= 1, "beta_half needs n >= 1");
    (1..n).fold(2.0, |b, k| b * k as f64 / (k as f64 + 0.5))
}

/// `∫₀¹ (1-u)^{-1/2} u^{n-1} du` by quadrature, after `u = 1 - v²`.
pub fn beta_half_quadrature(n: u32) -> f64 {
    2.0 * quad::integrate(|v| (1.0 - v * v).powi(n as i32 - 1), 0.0, 1.0, 1e-14)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapMomentCheck {
    pub t: f64,
    pub n: u32,
    pub mc_estimate: MonteCarloEstimate,
    pub analytic: f64,
}

impl GapMomentCheck {
    pub fn within_se(&self, k: f64) -> bool {
        self.mc_estimate.within_se(self.analytic, k)
    }
}

/// Monte Carlo `E[(t - τ_n)^{-1/2} | N_t = n]` from `n_mc` draws of the maximum
/// of `n` uniforms. With `λ = 0` there is nothing to condition on and the gap
/// is `t` itself.
///
/// The estimator has infinite variance (the integrand behaves like
/// `(t - τ)^{-1/2}` near `t`), so its standard error converges slowly.
pub fn last_jump_gap_moment(lambda: f64, t: f64, n: u32, n_mc: usize, seed: u64) -> Result<GapMomentCheck, SimError> {
    if !(t > 0.0) || !(lambda >= 0.0) {
        return Err(SimError::InvalidConfig("t > 0 and lambda >= 0".into()));
    }
    if lambda == 0.0 {
        let v = t.powf(-0.5);
        return Ok(GapMomentCheck { t, n: 0, mc_estimate: MonteCarloEstimate::exact(v), analytic: v });
    }
    if n == 0 || n_mc == 0 {
        return Err(SimError::InvalidConfig("n >= 1 and n_mc >= 1".into()));
    }
    const CHUNK: usize = 1 << 14;
    let chunks = n_mc.div_ceil(CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let len = CHUNK.min(n_mc - c * CHUNK);
            let mut acc = (0.0, 0.0);
            for _ in 0..len {
                let last = (0..n).map(|_| rng.random::<f64>()).fold(0.0, f64::max) * t;
                let v = (t - last).powf(-0.5);
                acc.0 += v;
                acc.1 += v * v;
            }
            acc
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = n_mc as f64;
    let mean = sum / m;
    let var = if n_mc > 1 { ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
    Ok(GapMomentCheck { t, n, mc_estimate: MonteCarloEstimate::new(mean, (var / m).sqrt(), n_mc), analytic: n as f64 * beta_half(n) / t.sqrt() })
}

/// `E[Δ_t^{-1/2}]` with `Δ_t = t - τ_{N_t}` (and `Δ_t = t` without jumps),
/// unconditionally over the Poisson count.
pub fn unconditional_gap_moment(lambda: f64, t: f64, n_mc: usize, seed: u64) -> Result<MonteCarloEstimate, SimError> {
    if lambda == 0.0 {
        return Ok(MonteCarloEstimate::exact(t.powf(-0.5)));
    }
    let poisson = Poisson::new(lambda * t).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let mut rng = substream(seed, 0);
    let samples: Vec<f64> = (0..n_mc)
        .map(|_| {
            let n = poisson.sample(&mut rng) as u64;
            let last = (0..n).map(|_| rng.random::<f64>()).fold(0.0, f64::max) * t;
            (t - last).powf(-0.5)
        })
        .collect();
    MonteCarloEstimate::from_samples(&samples)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityScan {
    pub times: Vec<f64>,
    pub sup_density: Vec<f64>,
    pub scaled: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

impl DensityScan {
    /// `max_t scaled / min_t scaled`.
    pub fn band_ratio(&self) -> f64 {
        let max = self.scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.scaled.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }
}

pub const DENSITY_GRID: usize = 2048;

/// `0.9 · min(sd, IQR/1.34) · n^{-1/5}`, falling back to `sd` when the IQR vanishes.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        sorted[i] + frac * (sorted[(i + 1).min(sorted.len() - 1)] - sorted[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// `(sup_y ρ̂(y), bandwidth)` for a Gaussian KDE on a grid over mean ± 6 sd.
pub fn kde_sup(samples: &[f64]) -> Result<(f64, f64), SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptyBundle);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let h = silverman_bandwidth(&sorted);
    if !(h > 0.0) {
        // All samples equal: the density estimate degenerates to a point mass.
        return Ok((f64::INFINITY, 0.0));
    }
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let (lo, hi) = (mean - 6.0 * sd, mean + 6.0 * sd);
    let cut = 8.0 * h;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let sup = (0..DENSITY_GRID)
        .into_par_iter()
        .map(|i| {
            let y = lo + (hi - lo) * i as f64 / (DENSITY_GRID - 1) as f64;
            let a = sorted.partition_point(|&v| v < y - cut);
            let b = sorted.partition_point(|&v| v <= y + cut);
            sorted[a..b].iter().map(|&v| (-0.5 * ((y - v) / h).powi(2)).exp()).sum::<f64>() * norm
        })
        .reduce(|| 0.0, f64::max);
    Ok((sup, h))
}

/// Scan of pre-computed cross sections.
pub fn scan_snapshots(snapshots: &StateSnapshots) -> Result<DensityScan, SimError> {
    let mut scan = DensityScan { times: Vec::new(), sup_density: Vec::new(), scaled: Vec::new(), bandwidth: Vec::new() };
    for (t, values) in snapshots.times.iter().zip(&snapshots.values) {
        let (sup, h) = kde_sup(values)?;
        scan.times.push(*t);
        scan.sup_density.push(sup);
        scan.scaled.push(t.sqrt() * sup);
        scan.bandwidth.push(h);
    }
    Ok(scan)
}

/// `√t · sup_y ρ̂_t(y)` for every `t` in `times`.
pub fn density_sup_scan(bundle: &PathBundle, times: &[f64]) -> Result<DensityScan, SimError> {
    if bundle.is_empty() {
        return Err(SimError::EmptyBundle);
    }
    scan_snapshots(&bundle.snapshots(times))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_values() {
        assert_eq!(beta_half(1), 2.0);
        assert!((beta_half(2) - 4.0 / 3.0).abs() < 1e-15);
        assert!((beta_half(3) - 16.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn beta_matches_quadrature() {
        for n in 1..=10 {
            assert!((beta_half(n) - beta_half_quadrature(n)).abs() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn no_jumps_means_full_gap() {
        let c = last_jump_gap_moment(0.0, 4.0, 1, 10, 0).unwrap();
        assert_eq!(c.mc_estimate.mean, 0.5);
        assert_eq!(c.analytic, 0.5);
        assert_eq!(unconditional_gap_moment(0.0, 4.0, 10, 0).unwrap().mean, 0.5);
    }

    #[test]
    fn analytic_gap_moment() {
        let c = last_jump_gap_moment(1.0, 4.0, 1, 1000, 3).unwrap();
        assert_eq!(c.analytic, 1.0);
        let c = last_jump_gap_moment(1.0, 1.0, 2, 1000, 3).unwrap();
        assert!((c.analytic - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn duplicated_samples_scale_identically() {
        let s = StateSnapshots { times: vec![1.0], values: vec![(0..500).map(|i| (i as f64 * 0.37).sin()).collect()] };
        let a = scan_snapshots(&s).unwrap();
        let b = scan_snapshots(&s).unwrap();
        assert_eq!(a, b);
        assert!(a.bandwidth[0] > 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(kde_sup(&[]), Err(SimError::EmptyBundle));
    }
}
