//! First variation, adjoint process and maximum-principle checks.
//!
//! For `dX = b(X, α) dt + σ dB + γ dN` with `b = b1 + b2 + b3`, the flow
//! derivative is
//!
//! ```text
//! Φ_{t,s} = exp{ ∫ ∂ₓb1 du + ∫ ∂ₓb3 du
//!              + (2/σ²) [ b̃₂(X_s) - b̃₂(X_t) - ∫ (b1 + b3) b2 du - ∫ b2² du
//!                         - σ ∫ b2 dB - Σ_jumps (b̃₂(X_{u-} + γ) - b̃₂(X_{u-})) ] }
//! ```
//!
//! with `b̃₂(x) = ∫₀ˣ b2` and all integrals over `(t, s]`. The bracket is the
//! Itô–Tanaka expression for `(σ²/2) ∫ b2'(X_u) du`, so no derivative of the
//! discontinuous part is needed.
//!
//! The adjoint is `P_t = E[Φ_{t,T} ∂ₓg(X_T) + ∫_t^T Φ_{t,s} ∂ₓf ds | X_t]`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{SimError, SmpError};
use crate::model::{ControlPolicy, DriftDecomposition, RunningCost, TerminalCost};
use crate::rng::{derive_seed, substream};
use crate::sim::{ControlledSystem, PathBundle, SamplePath, SimConfig, Simulator};
use crate::stats::{MonteCarloEstimate, Z95};

/// `∫₀ˣ b2(y) dy`, exact on constant and affine pieces.
pub fn antiderivative_b2(b2: &crate::piecewise::PiecewiseLipschitzFn, x: f64) -> f64 {
    b2.antiderivative(x)
}

/// Summands of `log Φ`, already carrying their signs and the `2/σ²` factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ExponentParts {
    pub dx_b1: f64,
    pub dx_b3: f64,
    pub level: f64,
    pub cross: f64,
    pub square: f64,
    pub stochastic: f64,
    pub jumps: f64,
}

impl ExponentParts {
    pub fn total(&self) -> f64 {
        self.dx_b1 + self.dx_b3 + self.level + self.cross + self.square + self.stochastic + self.jumps
    }

    fn add(&self, o: &Self) -> Self {
        Self {
            dx_b1: self.dx_b1 + o.dx_b1,
            dx_b3: self.dx_b3 + o.dx_b3,
            level: self.level + o.level,
            cross: self.cross + o.cross,
            square: self.square + o.square,
            stochastic: self.stochastic + o.stochastic,
            jumps: self.jumps + o.jumps,
        }
    }

    fn sub(&self, o: &Self) -> Self {
        Self {
            dx_b1: self.dx_b1 - o.dx_b1,
            dx_b3: self.dx_b3 - o.dx_b3,
            level: self.level - o.level,
            cross: self.cross - o.cross,
            square: self.square - o.square,
            stochastic: self.stochastic - o.stochastic,
            jumps: self.jumps - o.jumps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FirstVariationSample {
    pub t: f64,
    pub s: f64,
    pub phi: f64,
    pub components: ExponentParts,
}

/// `Φ_{t,s}` along one path, stored as a cumulative exponent per grid node.
#[derive(Clone, Debug)]
pub struct FirstVariation {
    times: Vec<f64>,
    cumulative: Vec<ExponentParts>,
    totals: Vec<f64>,
}

/// Computes `Φ` along `path`.
///
/// With `σ = 0` the Itô–Tanaka form is unavailable; the piece derivatives
/// of `b2` are integrated instead, which is valid as long as the continuous
/// motion never crosses a breakpoint.
pub fn first_variation(path: &SamplePath, drift: &DriftDecomposition, sigma: f64) -> Result<FirstVariation, SmpError> {
    let steps = path.steps();
    let (t, x, a) = (path.times(), path.states(), path.controls());
    let db = path.brownian();
    let b2 = &drift.b2;
    let b2_active = !b2.is_zero();
    if b2_active && sigma > 0.0 && db.len() != steps {
        return Err(SmpError::MissingNoise);
    }
    let mut jumps = path.jumps().iter().peekable();
    let mut cumulative = Vec::with_capacity(steps + 1);
    let mut acc = ExponentParts::default();
    cumulative.push(acc);
    let scale = if sigma > 0.0 { 2.0 / (sigma * sigma) } else { 0.0 };
    for k in 0..steps {
        let dt = t[k + 1] - t[k];
        let (xk, ak) = (x[k], a[k]);
        let mut step = ExponentParts { dx_b1: drift.b1.dx(xk, ak) * dt, dx_b3: drift.b3.dx(xk) * dt, ..Default::default() };
        // State just before any jump at node k+1.
        let mut pre = None;
        let mut jump_part = 0.0;
        while let Some(j) = jumps.next_if(|j| j.node == k + 1) {
            pre.get_or_insert(j.pre);
            jump_part += b2.antiderivative(j.post) - b2.antiderivative(j.pre);
        }
        let pre = pre.unwrap_or(x[k + 1]);
        if b2_active {
            if sigma > 0.0 {
                let b2k = b2.value(xk);
                step.level = scale * (b2.antiderivative(x[k + 1]) - b2.antiderivative(xk));
                step.cross = -scale * (drift.b1.value(xk, ak) + drift.b3.value(xk)) * b2k * dt;
                step.square = -scale * b2k * b2k * dt;
                step.stochastic = -scale * sigma * b2k * db[k];
                step.jumps = -scale * jump_part;
            } else {
                if b2.piece_index(xk) != b2.piece_index(pre) {
                    return Err(SmpError::CrossingWithoutNoise { t: t[k + 1] });
                }
                step.level = b2.derivative(xk) * dt;
            }
        }
        acc = acc.add(&step);
        if !acc.total().is_finite() {
            return Err(SmpError::NonFinitePhi { t: t[k + 1] });
        }
        cumulative.push(acc);
    }
    let totals = cumulative.iter().map(ExponentParts::total).collect();
    Ok(FirstVariation { times: t.to_vec(), cumulative, totals })
}

impl FirstVariation {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn index_at(&self, t: f64) -> usize {
        let tol = 1e-12 * (1.0 + t.abs());
        self.times.partition_point(|&s| s <= t + tol).saturating_sub(1)
    }

    /// `Φ` between grid nodes `j ≤ k`.
    pub fn phi_nodes(&self, j: usize, k: usize) -> f64 {
        (self.totals[k] - self.totals[j]).exp()
    }

    /// `log Φ_{0,k}` at node `k`.
    pub fn log_phi(&self, k: usize) -> f64 {
        self.totals[k] - self.totals[0]
    }

    pub fn phi(&self, t: f64, s: f64) -> Result<f64, SmpError> {
        Ok(self.sample(t, s)?.phi)
    }

    pub fn sample(&self, t: f64, s: f64) -> Result<FirstVariationSample, SmpError> {
        let (j, k) = (self.index_at(t), self.index_at(s));
        let (j, k) = (j.min(k), k.max(j));
        let components = self.cumulative[k].sub(&self.cumulative[j]);
        let phi = (self.totals[k] - self.totals[j]).exp();
        if !phi.is_finite() || phi <= 0.0 {
            return Err(SmpError::NonFinitePhi { t: s });
        }
        Ok(FirstVariationSample { t, s, phi, components })
    }

    /// `Φ_{0,T}`.
    pub fn terminal(&self) -> f64 {
        self.phi_nodes(0, self.times.len() - 1)
    }
}

/// `(X^{x0+h}_T - X^{x0}_T)/h` under the noise and recorded controls of `base`.
///
/// The controls are replayed open loop, which is what `Φ` differentiates.
pub fn first_variation_fd(system: &ControlledSystem, sigma: f64, base: &SamplePath, h: f64) -> Result<f64, SmpError> {
    let bumped = crate::sim::replay_open_loop(&system.drift, &system.jumps, sigma, base, base.initial() + h)?;
    let reference = crate::sim::replay_open_loop(&system.drift, &system.jumps, sigma, base, base.initial())?;
    Ok((bumped.terminal() - reference.terminal()) / h)
}

/// Empirical `E|Φ|^p` for `p ∈ {1, 2, 4}`.
pub fn moment_monitor(phis: &[f64], p: u32) -> Result<MonteCarloEstimate, SmpError> {
    if !matches!(p, 1 | 2 | 4) {
        return Err(SmpError::InvalidExponent(p));
    }
    let powered: Vec<f64> = phis.iter().map(|v| v.abs().powi(p as i32)).collect();
    Ok(MonteCarloEstimate::from_samples(&powered)?)
}

/// Ingredients of `H(t, x, p, a) = f(t, x, a) + (b(x, a) + ∫γ dν) p`.
#[derive(Clone, Debug)]
pub struct HamiltonianCtx {
    pub f: RunningCost,
    pub drift: DriftDecomposition,
    pub jump_compensator: f64,
}

impl HamiltonianCtx {
    pub fn new(f: RunningCost, system: &ControlledSystem) -> Self {
        Self { f, drift: system.drift.clone(), jump_compensator: system.jumps.compensator() }
    }

    pub fn hamiltonian(&self, t: f64, x: f64, p: f64, a: f64) -> f64 {
        self.f.value(t, x, a) + (self.drift.value(x, a) + self.jump_compensator) * p
    }

    /// `∂ₐH = ∂ₐf + ∂ₐb1 · p`.
    pub fn hamiltonian_da(&self, t: f64, x: f64, p: f64, a: f64) -> f64 {
        self.f.da(t, x, a) + self.drift.b1.da(x, a) * p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointMethod {
    NestedMc,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdjointEstimate {
    pub t: f64,
    pub x: f64,
    pub p: f64,
    pub std_err: f64,
    pub method: AdjointMethod,
}

impl AdjointEstimate {
    /// `|p| ≥ z · std_err` with `std_err > 0`, or an exact nonzero value.
    pub fn resolved(&self, z: f64) -> bool {
        self.p != 0.0 && self.p.abs() >= z * self.std_err
    }
}

/// `Φ_{j,T} ∂ₓg(X_T) + Σ_{k ≥ j} Φ_{j,k} ∂ₓf(t_k, X_k, a_k) Δt_k` for every node `j`.
fn pathwise_adjoint(path: &SamplePath, fv: &FirstVariation, f: &RunningCost, g: &TerminalCost) -> Vec<f64> {
    let n = path.times().len();
    let (t, x, a) = (path.times(), path.states(), path.controls());
    let last = n - 1;
    // Backward recursion in the log domain keeps every term O(1).
    let mut out = vec![0.0; n];
    let mut acc = g.dx(x[last]);
    out[last] = acc;
    for j in (0..last).rev() {
        acc = acc * fv.phi_nodes(j, j + 1) + f.dx(t[j], x[j], a[j]) * (t[j + 1] - t[j]);
        out[j] = acc;
    }
    out
}

/// `Φ_{0,T} ∂ₓg(X_T) + ∫ Φ_{0,s} ∂ₓf ds` along one path.
pub fn adjoint_sample(path: &SamplePath, drift: &DriftDecomposition, sigma: f64, f: &RunningCost, g: &TerminalCost) -> Result<f64, SmpError> {
    let fv = first_variation(path, drift, sigma)?;
    Ok(pathwise_adjoint(path, &fv, f, g)[0])
}

/// Nested Monte Carlo estimate of `P_t` at state `x`; `inner` defines the
/// sub-simulation (its `n_paths`, `dt`, seed) and `key` selects the substream family.
pub fn adjoint_nested_mc(inner: &Simulator<'_>, t: f64, x: f64, f: &RunningCost, g: &TerminalCost, key: u64) -> Result<AdjointEstimate, SmpError> {
    let cfg = inner.config();
    let family = derive_seed(cfg.seed, &[key]);
    let drift = &inner.system().drift;
    let samples: Result<Vec<f64>, SmpError> = (0..cfg.n_paths)
        .map(|j| {
            let path = inner.path_from(t, x, &mut substream(family, j as u64))?;
            adjoint_sample(&path, drift, cfg.sigma, f, g)
        })
        .collect();
    let est = MonteCarloEstimate::from_samples(&samples?)?;
    Ok(AdjointEstimate { t, x, p: est.mean, std_err: est.std_err, method: AdjointMethod::NestedMc })
}

/// Polynomial least-squares fit of one time slice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceFit {
    pub t: f64,
    pub degree: usize,
    pub center: f64,
    pub scale: f64,
    pub coefficients: Vec<f64>,
    /// `(AᵀA)⁻¹` scaled by the residual variance, row major.
    pub covariance: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
}

impl SliceFit {
    fn basis(&self, x: f64) -> Vec<f64> {
        let u = (x - self.center) / self.scale;
        (0..=self.degree).map(|d| u.powi(d as i32)).collect()
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.basis(x).iter().zip(&self.coefficients).map(|(b, c)| b * c).sum()
    }

    pub fn std_err(&self, x: f64) -> f64 {
        let phi = self.basis(x);
        let m = phi.len();
        let mut v = 0.0;
        for i in 0..m {
            for j in 0..m {
                v += phi[i] * self.covariance[i * m + j] * phi[j];
            }
        }
        v.max(0.0).sqrt()
    }
}

/// Regression estimate of `(t, x) ↦ P_t` on a set of time slices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjointSurface {
    pub slices: Vec<SliceFit>,
}

impl AdjointSurface {
    /// Fit of the slice nearest to `t`.
    pub fn slice(&self, t: f64) -> &SliceFit {
        self.slices.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs())).expect("surface has at least one slice")
    }

    pub fn estimate(&self, t: f64, x: f64) -> AdjointEstimate {
        let s = self.slice(t);
        AdjointEstimate { t, x, p: s.predict(x), std_err: s.std_err(x), method: AdjointMethod::Regression }
    }
}

pub const DEFAULT_BASIS_DEGREE: usize = 3;
pub const DEFAULT_INNER_PATHS: usize = 500;

/// Least-squares projection of the pathwise adjoint integrand on polynomials
/// of `X_t`, one fit per slice time.
///
/// The degree is capped at the number of distinct states minus one.
pub fn adjoint_regression(
    bundle: &PathBundle,
    drift: &DriftDecomposition,
    f: &RunningCost,
    g: &TerminalCost,
    slice_times: &[f64],
    degree: usize,
) -> Result<AdjointSurface, SmpError> {
    if bundle.is_empty() {
        return Err(SimError::EmptyBundle.into());
    }
    let sigma = bundle.config.sigma;
    let per_path: Result<Vec<Vec<(f64, f64)>>, SmpError> = bundle
        .paths
        .par_iter()
        .map(|p| {
            let fv = first_variation(p, drift, sigma)?;
            let y = pathwise_adjoint(p, &fv, f, g);
            Ok(slice_times
                .iter()
                .map(|&t| {
                    let j = p.index_at(t);
                    (p.states()[j], y[j])
                })
                .collect())
        })
        .collect();
    let per_path = per_path?;
    let slices: Result<Vec<SliceFit>, SmpError> = slice_times
        .par_iter()
        .enumerate()
        .map(|(s, &t)| {
            let xs: Vec<f64> = per_path.iter().map(|r| r[s].0).collect();
            let ys: Vec<f64> = per_path.iter().map(|r| r[s].1).collect();
            fit_slice(t, &xs, &ys, degree)
        })
        .collect();
    Ok(AdjointSurface { slices: slices? })
}

fn fit_slice(t: f64, xs: &[f64], ys: &[f64], degree: usize) -> Result<SliceFit, SmpError> {
    let n = xs.len();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let degree = degree.min(sorted.len() - 1);
    let center = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - center).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let m = degree + 1;
    let a = DMatrix::from_fn(n, m, |i, d| ((xs[i] - center) / scale).powi(d as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| !(s > 1e-12 * smax.max(1e-300))) {
        return Err(SmpError::RankDeficient { t });
    }
    let coef = svd.solve(&b, 0.0).map_err(|_| SmpError::RankDeficient { t })?;
    let resid = &b - &a * &coef;
    let rss = resid.norm_squared();
    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let tss: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let s2 = if n > m { rss / (n - m) as f64 } else { 0.0 };
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut covariance = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            covariance[i * m + j] = s2 * (0..m).map(|k| v_t[(k, i)] * v_t[(k, j)] / svd.singular_values[k].powi(2)).sum::<f64>();
        }
    }
    Ok(SliceFit { t, degree, center, scale, coefficients: coef.iter().copied().collect(), covariance, r_squared, n })
}

/// Whether the problem is a maximisation of `J` or a minimisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Maximise,
    Minimise,
}

impl Sense {
    /// Sign that turns `∂ₐH · (β - α̂)` into a quantity that is `≥ 0` at an optimum.
    fn orientation(self) -> f64 {
        match self {
            Sense::Maximise => -1.0,
            Sense::Minimise => 1.0,
        }
    }
}

/// One state along an optimal trajectory together with its adjoint estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub t: f64,
    pub x: f64,
    pub a_hat: f64,
    pub adjoint: AdjointEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionScan {
    pub min_product: f64,
    pub violation_fraction: f64,
    pub n_products: usize,
    pub n_violations: usize,
    pub n_excluded: usize,
}

/// Evaluates the oriented products `±∂ₐH(t, X̂, P̂, α̂)(β - α̂)` for every point
/// outside the band `|X̂| < band_eps` and every `β` in `grid_a`.
///
/// A product counts as a violation only when it is below
/// `-z · |∂ₐb1| · se(P̂) · |β - α̂|`, i.e. when its sign is resolved by the
/// adjoint's confidence interval.
pub fn necessary_condition_scan(points: &[ScanPoint], ctx: &HamiltonianCtx, grid_a: &[f64], band_eps: f64, sense: Sense, z: f64) -> ConditionScan {
    let orient = sense.orientation();
    let mut min_product = f64::INFINITY;
    let (mut n_products, mut n_violations, mut n_excluded) = (0, 0, 0);
    for pt in points {
        if pt.x.abs() < band_eps {
            n_excluded += 1;
            continue;
        }
        let dh = ctx.hamiltonian_da(pt.t, pt.x, pt.adjoint.p, pt.a_hat);
        let sensitivity = ctx.drift.b1.da(pt.x, pt.a_hat).abs();
        for &beta in grid_a {
            let product = orient * dh * (beta - pt.a_hat);
            let tol = z * sensitivity * pt.adjoint.std_err * (beta - pt.a_hat).abs();
            min_product = min_product.min(product);
            n_products += 1;
            if product < -tol {
                n_violations += 1;
            }
        }
    }
    let violation_fraction = if n_products > 0 { n_violations as f64 / n_products as f64 } else { 0.0 };
    ConditionScan { min_product, violation_fraction, n_products, n_violations, n_excluded }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignRelation {
    /// Frequency of `sgn(P̂) = -sgn(X̂)` among estimates resolved by their CI.
    pub frequency: f64,
    pub n_resolved: usize,
    /// Same frequency over every counted point, resolved or not.
    pub raw_frequency: f64,
    pub n_counted: usize,
}

/// Checks `sgn(P̂_t) = -sgn(X̂_t)` on points with `|X̂_t| ≥ band_eps`.
pub fn sign_relation_check(points: &[ScanPoint], band_eps: f64, z: f64) -> SignRelation {
    let counted: Vec<&ScanPoint> = points.iter().filter(|p| p.x.abs() >= band_eps && p.x != 0.0).collect();
    let agrees = |p: &ScanPoint| p.adjoint.p.signum() == -p.x.signum() && p.adjoint.p != 0.0;
    let resolved: Vec<&ScanPoint> = counted.iter().copied().filter(|p| p.adjoint.resolved(z)).collect();
    let frac = |hits: usize, n: usize| if n > 0 { hits as f64 / n as f64 } else { f64::NAN };
    SignRelation {
        frequency: frac(resolved.iter().filter(|p| agrees(p)).count(), resolved.len()),
        n_resolved: resolved.len(),
        raw_frequency: frac(counted.iter().filter(|p| agrees(p)).count(), counted.len()),
        n_counted: counted.len(),
    }
}

/// Settings of a full maximum-principle check.
#[derive(Clone, Debug)]
pub struct SmpCheckConfig {
    pub outer: SimConfig,
    pub x0: f64,
    pub inner_paths: usize,
    pub inner_dt: f64,
    pub slice_times: Vec<f64>,
    pub grid_a: Vec<f64>,
    pub band_eps: f64,
    pub sense: Sense,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmpReport {
    pub scan: ConditionScan,
    pub sign: SignRelation,
    pub points: Vec<ScanPoint>,
}

/// Simulates outer paths under `policy`, estimates `P̂` by nested Monte Carlo
/// at every slice time of every path and runs both checks.
pub fn verify_maximum_principle(
    system: &ControlledSystem,
    policy: &ControlPolicy,
    f: &RunningCost,
    g: &TerminalCost,
    cfg: &SmpCheckConfig,
) -> Result<SmpReport, SmpError> {
    let outer = Simulator::new(system, policy, cfg.outer)?;
    let inner_cfg = SimConfig { dt: cfg.inner_dt, n_paths: cfg.inner_paths, seed: derive_seed(cfg.outer.seed, &[0x1a2b]), ..cfg.outer };
    let inner = Simulator::new(system, policy, inner_cfg)?;
    let starts: Vec<(usize, usize, f64, f64)> = {
        let paths = outer.map(cfg.x0, |p| cfg.slice_times.iter().map(|&t| p.state_at(t)).collect::<Vec<_>>())?;
        paths
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(s, &x)| (i, s, x)))
            .map(|(i, s, x)| (i, s, cfg.slice_times[s], x))
            .collect()
    };
    let points: Result<Vec<ScanPoint>, SmpError> = starts
        .par_iter()
        .map(|&(i, s, t, x)| {
            let key = ((i as u64) << 20) | s as u64;
            let adjoint = adjoint_nested_mc(&inner, t, x, f, g, key)?;
            Ok(ScanPoint { t, x, a_hat: policy.eval(t, x), adjoint })
        })
        .collect();
    let points = points?;
    let ctx = HamiltonianCtx::new(f.clone(), system);
    let scan = necessary_condition_scan(&points, &ctx, &cfg.grid_a, cfg.band_eps, cfg.sense, cfg.z);
    let sign = sign_relation_check(&points, cfg.band_eps, cfg.z);
    Ok(SmpReport { scan, sign, points })
}

pub const DEFAULT_Z: f64 = Z95;
