//! Controlled insurance surplus with threshold drain and injection.
//!
//! ```text
//! dX = -{δX + α - β sgn(X) 1{|X| > H}} dt - σ dB - ∫ z N(dz, dt)
//! ```
//!
//! In drift-decomposition form `b1(x, a) = -a`, `b2(x) = β sgn(x) 1{|x| > H}`,
//! `b3(x) = -δx`. By default the claims are replaced by their diffusion
//! approximation with volatility `σ̄ = √(λ(τ² + μ²))`, merged with `σ` into a
//! single Brownian driver.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SimError};
use crate::model::{
    ControlPolicy, ControlSet, ControlledDrift, DriftDecomposition, JumpMap, JumpModel, JumpSize, PolicyKind, RunningCost, StateDrift, TerminalCost,
};
use crate::piecewise::PiecewiseLipschitzFn;
use crate::sim::{estimate_cost, ControlledSystem, Scheme, SimConfig, Simulator};
use crate::stats::MonteCarloEstimate;

/// `σ̄ = √(λ(τ² + μ²))`.
pub fn sigma_bar(lambda: f64, mu: f64, tau: f64) -> f64 {
    (lambda * (tau * tau + mu * mu)).sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimModel {
    /// Claims enter through `σ̄` only.
    #[default]
    DiffusionApproximation,
    /// Compound Poisson claims with `N(μ, τ²)` sizes, each lowering the surplus by `z`.
    CompoundPoisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurplusModel {
    pub x0: f64,
    pub delta: f64,
    pub beta: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub mu: f64,
    pub tau: f64,
    pub a_max: f64,
    pub claims: ClaimModel,
}

impl Default for SurplusModel {
    fn default() -> Self {
        Self::baseline()
    }
}

impl SurplusModel {
    /// `x = 0, δ = 0.05, β = 1, H = 1, σ = 0.2, μ = 0`, `a = 2`, with `λ = 2`, `τ = 0.5`.
    pub fn baseline() -> Self {
        Self { x0: 0.0, delta: 0.05, beta: 1.0, h: 1.0, sigma: 0.2, lambda: 2.0, mu: 0.0, tau: 0.5, a_max: 2.0, claims: ClaimModel::DiffusionApproximation }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_claims(mut self, claims: ClaimModel) -> Self {
        self.claims = claims;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |ok: bool, name: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::InvalidParameter { name, reason: reason.into() })
            }
        };
        check(self.beta >= 0.0 && self.beta.is_finite(), "beta", "beta >= 0")?;
        check(self.h > 0.0 && self.h.is_finite(), "H", "H > 0")?;
        check(self.a_max > 0.0 && self.a_max.is_finite(), "a_max", "a_max > 0")?;
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda", "lambda >= 0")?;
        check(self.tau >= 0.0 && self.tau.is_finite(), "tau", "tau >= 0")?;
        check(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma", "sigma >= 0")?;
        check(self.delta.is_finite() && self.mu.is_finite() && self.x0.is_finite(), "delta", "finite parameters")
    }

    pub fn sigma_bar(&self) -> f64 {
        sigma_bar(self.lambda, self.mu, self.tau)
    }

    /// Diffusion coefficient handed to the simulator.
    pub fn effective_sigma(&self) -> f64 {
        match self.claims {
            ClaimModel::DiffusionApproximation => (self.sigma * self.sigma + self.sigma_bar().powi(2)).sqrt(),
            ClaimModel::CompoundPoisson => self.sigma,
        }
    }

    pub fn control_set(&self) -> ControlSet {
        ControlSet::symmetric(self.a_max).expect("a_max > 0 is validated")
    }

    pub fn jumps(&self) -> Result<JumpModel, ModelError> {
        match self.claims {
            ClaimModel::DiffusionApproximation => Ok(JumpModel::none()),
            ClaimModel::CompoundPoisson => {
                let size = if self.tau > 0.0 { JumpSize::Normal { mean: self.mu, sd: self.tau } } else { JumpSize::Fixed(self.mu) };
                JumpModel::new(self.lambda, size, JumpMap::Negate)
            }
        }
    }

    pub fn system(&self) -> Result<ControlledSystem, ModelError> {
        self.validate()?;
        Ok(ControlledSystem::new(build_surplus_drift(self)?, self.jumps()?))
    }

    pub fn sim_config(&self, horizon: f64, dt: f64, n_paths: usize, seed: u64) -> SimConfig {
        SimConfig::new(horizon, dt, n_paths, seed, self.effective_sigma())
    }
}

/// `b1(x, a) = -a`, `b2(x) = β sgn(x) 1{|x| > H}`, `b3(x) = -δx`.
pub fn build_surplus_drift(model: &SurplusModel) -> Result<DriftDecomposition, ModelError> {
    let b2 = if model.beta == 0.0 { PiecewiseLipschitzFn::zero() } else { PiecewiseLipschitzFn::symmetric_threshold(model.beta, model.h)? };
    Ok(DriftDecomposition::new(ControlledDrift::linear_in_control(-1.0), b2, StateDrift::linear(-model.delta)))
}

/// How the comparison policies are read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyConvention {
    /// Every policy pulls the surplus toward zero: `a = clip(x)`, `a = 1{x > thr}`.
    #[default]
    Corrective,
    /// Formulas taken verbatim: `a = clip(-x)`, `a = -1{x > thr}`.
    Literal,
}

/// Linear feedback, threshold and sign policies on `[-a_max, a_max]`.
pub fn policy_library(a_max: f64, threshold: f64) -> Result<Vec<ControlPolicy>, ModelError> {
    policy_library_with(a_max, threshold, PolicyConvention::Corrective)
}

pub fn policy_library_with(a_max: f64, threshold: f64, convention: PolicyConvention) -> Result<Vec<ControlPolicy>, ModelError> {
    let bounds = ControlSet::symmetric(a_max)?;
    let s = match convention {
        PolicyConvention::Corrective => 1.0,
        PolicyConvention::Literal => -1.0,
    };
    Ok(vec![
        ControlPolicy::new("linear", PolicyKind::LinearFeedback { gain: s, offset: 0.0 }, bounds),
        ControlPolicy::new("threshold", PolicyKind::Threshold { level: threshold, value: s }, bounds),
        sign_policy(a_max)?,
    ])
}

/// `a · sgn(x)`.
pub fn sign_policy(a_max: f64) -> Result<ControlPolicy, ModelError> {
    Ok(ControlPolicy::new("sign", PolicyKind::Sign { magnitude: a_max }, ControlSet::symmetric(a_max)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "T")]
    Horizon,
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "tau")]
    Tau,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Horizon => "T",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Tau => "tau",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "T" => Some(SweepAxis::Horizon),
            "lambda" => Some(SweepAxis::Lambda),
            "tau" => Some(SweepAxis::Tau),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub policy: String,
    pub estimate: MonteCarloEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Points of one policy in sweep order.
    pub fn series(&self, policy: &str) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.policy == policy).collect()
    }

    pub fn policies(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.points {
            if !names.contains(&p.policy) {
                names.push(p.policy.clone());
            }
        }
        names
    }
}

/// Simulation settings shared by every sweep point; the horizon is the
/// default for axes other than `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

/// `E[X_T²]` under `policy` for one model and horizon.
pub fn terminal_second_moment(model: &SurplusModel, policy: &ControlPolicy, horizon: f64, cfg: &SweepConfig) -> Result<MonteCarloEstimate, SimError> {
    let system = model.system()?;
    let sim_cfg = model.sim_config(horizon, cfg.dt.min(horizon), cfg.n_paths, cfg.seed).with_scheme(cfg.scheme);
    let sim = Simulator::new(&system, policy, sim_cfg)?;
    estimate_cost(&sim, model.x0, &RunningCost::zero(), &TerminalCost::square())
}

/// Every policy at every axis value, all with the same seed.
pub fn sweep(model: &SurplusModel, policies: &[ControlPolicy], axis: SweepAxis, values: &[f64], cfg: &SweepConfig) -> Result<SweepResult, SimError> {
    if values.is_empty() || policies.is_empty() {
        return Err(SimError::InvalidConfig("sweep needs at least one value and one policy".into()));
    }
    let mut points = Vec::with_capacity(values.len() * policies.len());
    for &v in values {
        let (m, horizon) = match axis {
            SweepAxis::Horizon => (*model, v),
            SweepAxis::Lambda => (model.with_lambda(v), cfg.horizon),
            SweepAxis::Tau => (model.with_tau(v), cfg.horizon),
        };
        for p in policies {
            let estimate = terminal_second_moment(&m, p, horizon, cfg)?;
            points.push(SweepPoint { value: v, policy: p.name().to_string(), estimate });
        }
    }
    Ok(SweepResult { axis: axis.name().to_string(), points })
}

pub fn sweep_t(model: &SurplusModel, policies: &[ControlPolicy], t_list: &[f64], cfg: &SweepConfig) -> Result<SweepResult, SimError> {
    sweep(model, policies, SweepAxis::Horizon, t_list, cfg)
}

pub fn sweep_lambda(model: &SurplusModel, policy: &ControlPolicy, lambdas: &[f64], cfg: &SweepConfig) -> Result<SweepResult, SimError> {
    sweep(model, std::slice::from_ref(policy), SweepAxis::Lambda, lambdas, cfg)
}

pub fn sweep_tau(model: &SurplusModel, policy: &ControlPolicy, taus: &[f64], cfg: &SweepConfig) -> Result<SweepResult, SimError> {
    sweep(model, std::slice::from_ref(policy), SweepAxis::Tau, taus, cfg)
}

/// `true` when each estimate is at least the previous one minus `z` combined standard errors.
pub fn non_decreasing_within(estimates: &[MonteCarloEstimate], z: f64) -> bool {
    estimates.windows(2).all(|w| w[1].mean >= w[0].mean - z * w[0].combined_se(&w[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_bar_examples() {
        assert_eq!(sigma_bar(0.0, 0.3, 0.5), 0.0);
        assert_eq!(sigma_bar(3.0, 0.0, 0.0), 0.0);
        assert_eq!(sigma_bar(4.0, 0.0, 0.5), 1.0);
    }

    #[test]
    fn total_variance_is_additive() {
        let m = SurplusModel::baseline();
        let v = m.effective_sigma().powi(2);
        assert!((v - (0.04 + 2.0 * 0.25)).abs() < 1e-15);
        assert_eq!(m.with_claims(ClaimModel::CompoundPoisson).effective_sigma(), 0.2);
    }

    #[test]
    fn baseline_drift_has_the_expected_breakpoints() {
        let d = build_surplus_drift(&SurplusModel::baseline()).unwrap();
        assert_eq!(d.b2.breakpoints(), &[-1.0, 1.0]);
        assert_eq!((d.b2.left_limit(0), d.b2.right_limit(0)), (-1.0, 0.0));
        assert_eq!((d.b2.left_limit(1), d.b2.right_limit(1)), (0.0, 1.0));
        assert_eq!(d.value(0.4, 1.5), -0.05 * 0.4 - 1.5);
    }

    #[test]
    fn zero_beta_gives_continuous_drift() {
        let m = SurplusModel { beta: 0.0, ..SurplusModel::baseline() };
        assert!(build_surplus_drift(&m).unwrap().b2.is_zero());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(SurplusModel { h: 0.0, ..SurplusModel::baseline() }.validate().is_err());
        assert!(SurplusModel { a_max: -1.0, ..SurplusModel::baseline() }.validate().is_err());
        assert!(SurplusModel { tau: -0.1, ..SurplusModel::baseline() }.validate().is_err());
    }

    #[test]
    fn policy_values() {
        let lib = policy_library(2.0, 2.0).unwrap();
        let sign = &lib[2];
        assert_eq!(sign.eval(0.0, 0.3), 2.0);
        assert_eq!(sign.eval(0.0, 0.0), 0.0);
        assert_eq!(lib[0].eval(0.0, 5.0), 2.0);
        assert_eq!(lib[1].eval(0.0, 2.5), 1.0);
        assert_eq!(lib[1].eval(0.0, 2.0), 0.0);
        let literal = policy_library_with(2.0, 2.0, PolicyConvention::Literal).unwrap();
        assert_eq!(literal[0].eval(0.0, 5.0), -2.0);
        assert_eq!(literal[1].eval(0.0, 2.5), -1.0);
        assert_eq!(literal[2].eval(0.0, 0.3), 2.0);
    }

    #[test]
    fn sweep_layout() {
        let m = SurplusModel::baseline();
        let cfg = SweepConfig { horizon: 0.5, dt: 0.01, n_paths: 50, seed: 1, scheme: Scheme::DirectEuler };
        let lib = policy_library(2.0, 2.0).unwrap();
        let r = sweep_t(&m, &lib, &[0.1, 0.5], &cfg).unwrap();
        assert_eq!(r.points.len(), 6);
        assert_eq!(r.policies(), vec!["linear", "threshold", "sign"]);
        assert!(r.points.iter().all(|p| p.estimate.n == 50));
        assert!(sweep_t(&m, &lib, &[], &cfg).is_err());
    }
}
