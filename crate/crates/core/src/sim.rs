//! Jump-adapted Euler–Maruyama simulation of the controlled state equation
//!
//! ```text
//! X_t = x + ∫₀ᵗ b(X_u, α(u, X_u)) du + σ B_t + Σ_{jumps ≤ t} γ(z)
//! ```
//!
//! The uniform `dt` grid is refined with every jump epoch. Between nodes the
//! drift is evaluated at the left state; at a jump epoch the pre-jump state
//! receives `γ(z)`. Each path keeps its Brownian increments, jump record and
//! control values so the same noise can be replayed under a different drift
//! or initial condition.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{SimError, TransformError};
use crate::model::{ControlPolicy, DriftDecomposition, JumpModel, RunningCost, TerminalCost};
use crate::rng::{substream, PathRng};
use crate::stats::MonteCarloEstimate;
use crate::transform::{self, TransformG};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    DirectEuler,
    Transformed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub n_paths: usize,
    pub seed: u64,
    pub sigma: f64,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64, sigma: f64) -> Self {
        Self { horizon, dt, scheme: Scheme::DirectEuler, n_paths, seed, sigma }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_paths(mut self, n_paths: usize) -> Self {
        self.n_paths = n_paths;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail("T > 0");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail("dt > 0");
        }
        if self.dt > self.horizon {
            return fail("dt <= T");
        }
        if self.n_paths < 1 {
            return fail("n_paths >= 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail("sigma >= 0");
        }
        Ok(())
    }

    /// SHA-256 of the configuration and initial state, stored in bundle dumps.
    pub fn digest(&self, x0: f64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"jumpctl-bundle-v1");
        h.update(self.horizon.to_le_bytes());
        h.update(self.dt.to_le_bytes());
        h.update([self.scheme as u8]);
        h.update((self.n_paths as u64).to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.sigma.to_le_bytes());
        h.update(x0.to_le_bytes());
        h.finalize().into()
    }
}

/// Drift and jump specification of a controlled system; the diffusion
/// coefficient lives in [`SimConfig`].
#[derive(Clone, Debug)]
pub struct ControlledSystem {
    pub drift: DriftDecomposition,
    pub jumps: JumpModel,
}

impl ControlledSystem {
    pub fn new(drift: DriftDecomposition, jumps: JumpModel) -> Self {
        Self { drift, jumps }
    }

    pub fn without_jumps(drift: DriftDecomposition) -> Self {
        Self { drift, jumps: JumpModel::none() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Grid node at which the jump happens.
    pub node: usize,
    pub time: f64,
    pub z: f64,
    /// `γ(z)`.
    pub increment: f64,
    pub pre: f64,
    pub post: f64,
}

/// One simulated trajectory on its jump-adapted grid.
///
/// `states[k]` is the càdlàg value at `times[k]` (post-jump at jump epochs);
/// `brownian[k]` and `controls[k]` belong to the step `times[k] → times[k+1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    times: Vec<f64>,
    states: Vec<f64>,
    brownian: Vec<f64>,
    controls: Vec<f64>,
    jumps: Vec<JumpEvent>,
}

impl SamplePath {
    pub fn from_parts(times: Vec<f64>, states: Vec<f64>, brownian: Vec<f64>, controls: Vec<f64>, jumps: Vec<JumpEvent>) -> Result<Self, SimError> {
        let nodes = times.len();
        if nodes == 0 || states.len() != nodes || controls.len() + 1 != nodes {
            return Err(SimError::InvalidConfig("path arrays have inconsistent lengths".into()));
        }
        if !brownian.is_empty() && brownian.len() + 1 != nodes {
            return Err(SimError::InvalidConfig("brownian increments do not match the grid".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::InvalidConfig("path times must be strictly increasing".into()));
        }
        if jumps.iter().any(|j| j.node == 0 || j.node >= nodes) {
            return Err(SimError::InvalidConfig("jump node out of range".into()));
        }
        Ok(Self { times, states, brownian, controls, jumps })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn brownian(&self) -> &[f64] {
        &self.brownian
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn jumps(&self) -> &[JumpEvent] {
        &self.jumps
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn initial(&self) -> f64 {
        self.states[0]
    }

    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("paths are non-empty")
    }

    /// Index of the last node with time `≤ t`.
    pub fn index_at(&self, t: f64) -> usize {
        let tol = 1e-12 * (1.0 + t.abs());
        self.times.partition_point(|&s| s <= t + tol).saturating_sub(1)
    }

    pub fn state_at(&self, t: f64) -> f64 {
        self.states[self.index_at(t)]
    }

    pub fn drop_noise(&mut self) {
        self.brownian.clear();
    }
}

/// Driving noise of one path: grid, Brownian increments and jumps by node.
#[derive(Clone, Debug)]
pub(crate) struct Skeleton {
    pub times: Vec<f64>,
    pub db: Vec<f64>,
    pub jumps: Vec<(usize, f64)>,
}

impl Skeleton {
    /// Draws jumps first (count, epochs, sizes), then one normal per step.
    pub fn sample<R: Rng + ?Sized>(jumps: &JumpModel, t0: f64, horizon: f64, dt: f64, rng: &mut R) -> Self {
        let draws = jumps.sample_on(t0, horizon, rng);
        let span = horizon - t0;
        let n_uniform = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let mut times = Vec::with_capacity(n_uniform + 1 + draws.len());
        let mut jump_nodes = Vec::with_capacity(draws.len());
        let mut next = draws.iter().peekable();
        for k in 0..n_uniform {
            let node_t = t0 + k as f64 * dt;
            while let Some(d) = next.peek() {
                if d.time < node_t {
                    times.push(d.time);
                    jump_nodes.push((times.len() - 1, d.z));
                    next.next();
                } else if d.time == node_t && k > 0 {
                    jump_nodes.push((times.len(), d.z));
                    next.next();
                } else {
                    break;
                }
            }
            times.push(node_t);
        }
        for d in next {
            if d.time < horizon {
                times.push(d.time);
                jump_nodes.push((times.len() - 1, d.z));
            }
        }
        times.push(horizon);
        let db = times
            .windows(2)
            .map(|w| {
                let z: f64 = StandardNormal.sample(rng);
                z * (w[1] - w[0]).sqrt()
            })
            .collect();
        Self { times, db, jumps: jump_nodes }
    }

    /// Noise of an existing path, for common-noise replays.
    pub fn from_path(path: &SamplePath) -> Self {
        Self {
            times: path.times.clone(),
            db: if path.brownian.is_empty() { vec![0.0; path.steps()] } else { path.brownian.clone() },
            jumps: path.jumps.iter().map(|j| (j.node, j.z)).collect(),
        }
    }
}

/// Where the control value for each step comes from.
#[derive(Clone, Copy)]
pub(crate) enum ControlSource<'a> {
    Feedback(&'a ControlPolicy),
    /// Open-loop replay of recorded control values.
    Replay(&'a [f64]),
}

impl ControlSource<'_> {
    fn at(&self, step: usize, t: f64, x: f64) -> f64 {
        match self {
            ControlSource::Feedback(p) => p.eval(t, x),
            ControlSource::Replay(values) => values[step],
        }
    }
}

pub(crate) fn integrate_direct(
    drift: &DriftDecomposition,
    jumps: &JumpModel,
    sigma: f64,
    skel: &Skeleton,
    x0: f64,
    control: ControlSource<'_>,
) -> Result<SamplePath, SimError> {
    let steps = skel.times.len() - 1;
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut events = Vec::with_capacity(skel.jumps.len());
    let mut pending = skel.jumps.iter().peekable();
    let mut x = x0;
    states.push(x);
    for k in 0..steps {
        let t = skel.times[k];
        let dt = skel.times[k + 1] - t;
        let a = control.at(k, t, x);
        controls.push(a);
        x += drift.value(x, a) * dt + sigma * skel.db[k];
        while let Some(&&(node, z)) = pending.peek() {
            if node != k + 1 {
                break;
            }
            let increment = jumps.gamma(z);
            let pre = x;
            x = pre + increment;
            events.push(JumpEvent { node, time: skel.times[node], z, increment, pre, post: x });
            pending.next();
        }
        if !x.is_finite() {
            return Err(SimError::NonFiniteState { t: skel.times[k + 1] });
        }
        states.push(x);
    }
    Ok(SamplePath { times: skel.times.clone(), states, brownian: skel.db.clone(), controls, jumps: events })
}

/// Open-loop replay of `path`'s noise and recorded controls from a new
/// initial state, optionally under a different drift.
pub fn replay_open_loop(drift: &DriftDecomposition, jumps: &JumpModel, sigma: f64, path: &SamplePath, x0: f64) -> Result<SamplePath, SimError> {
    integrate_direct(drift, jumps, sigma, &Skeleton::from_path(path), x0, ControlSource::Replay(path.controls()))
}

pub(crate) fn assemble_path(skel: &Skeleton, states: Vec<f64>, controls: Vec<f64>, jumps: Vec<JumpEvent>) -> SamplePath {
    SamplePath { times: skel.times.clone(), states, brownian: skel.db.clone(), controls, jumps }
}

/// Simulates paths of one controlled system under one policy.
pub struct Simulator<'a> {
    system: &'a ControlledSystem,
    policy: &'a ControlPolicy,
    cfg: SimConfig,
    transform: Option<TransformG>,
}

impl<'a> Simulator<'a> {
    pub fn new(system: &'a ControlledSystem, policy: &'a ControlPolicy, cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let transform = match cfg.scheme {
            Scheme::DirectEuler => None,
            Scheme::Transformed => {
                if cfg.sigma == 0.0 {
                    return Err(TransformError::DegenerateDiffusion.into());
                }
                Some(TransformG::for_diffusion(&system.drift, cfg.sigma)?)
            }
        };
        Ok(Self { system, policy, cfg, transform })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn system(&self) -> &ControlledSystem {
        self.system
    }

    pub fn policy(&self) -> &ControlPolicy {
        self.policy
    }

    /// The transform used by the transformed scheme, if any.
    pub fn transform(&self) -> Option<&TransformG> {
        self.transform.as_ref()
    }

    /// Path `index` of the bundle, drawn from substream `(seed, index)`.
    pub fn path(&self, x0: f64, index: u64) -> Result<SamplePath, SimError> {
        self.path_from(0.0, x0, &mut substream(self.cfg.seed, index))
    }

    /// A path on `[t0, T]` started from `x0` at time `t0`.
    pub fn path_from(&self, t0: f64, x0: f64, rng: &mut PathRng) -> Result<SamplePath, SimError> {
        let skel = Skeleton::sample(&self.system.jumps, t0, self.cfg.horizon, self.cfg.dt, rng);
        self.integrate(&skel, x0)
    }

    pub(crate) fn integrate(&self, skel: &Skeleton, x0: f64) -> Result<SamplePath, SimError> {
        match &self.transform {
            None => integrate_direct(&self.system.drift, &self.system.jumps, self.cfg.sigma, skel, x0, ControlSource::Feedback(self.policy)),
            Some(g) => transform::integrate_transformed(g, &self.system.drift, &self.system.jumps, self.cfg.sigma, skel, x0, self.policy),
        }
    }

    pub fn bundle(&self, x0: f64) -> Result<PathBundle, SimError> {
        let paths = self.map(x0, |p| p)?;
        Ok(PathBundle { paths, config: self.cfg, x0 })
    }

    /// Simulates every path and maps it to `T` without keeping the path.
    ///
    /// Output order follows path index, so results do not depend on the
    /// number of worker threads.
    pub fn map<T, F>(&self, x0: f64, f: F) -> Result<Vec<T>, SimError>
    where
        T: Send,
        F: Fn(SamplePath) -> T + Sync + Send,
    {
        (0..self.cfg.n_paths)
            .into_par_iter()
            .map(|i| self.path(x0, i as u64).map(&f).map_err(|e| SimError::PathFailed { index: i, source: Box::new(e) }))
            .collect()
    }

    /// States of every path at the requested times.
    pub fn snapshots(&self, x0: f64, times: &[f64]) -> Result<StateSnapshots, SimError> {
        let per_path = self.map(x0, |p| times.iter().map(|&t| p.state_at(t)).collect::<Vec<_>>())?;
        Ok(StateSnapshots::from_rows(times, per_path))
    }
}

pub fn simulate_path(system: &ControlledSystem, policy: &ControlPolicy, cfg: &SimConfig, x0: f64, rng: &mut PathRng) -> Result<SamplePath, SimError> {
    Simulator::new(system, policy, *cfg)?.path_from(0.0, x0, rng)
}

pub fn simulate_bundle(system: &ControlledSystem, policy: &ControlPolicy, cfg: &SimConfig, x0: f64) -> Result<PathBundle, SimError> {
    Simulator::new(system, policy, *cfg)?.bundle(x0)
}

/// Independent paths sharing one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub paths: Vec<SamplePath>,
    pub config: SimConfig,
    pub x0: f64,
}

impl PathBundle {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn config_hash(&self) -> [u8; 32] {
        self.config.digest(self.x0)
    }

    pub fn terminals(&self) -> Vec<f64> {
        self.paths.iter().map(SamplePath::terminal).collect()
    }

    pub fn snapshots(&self, times: &[f64]) -> StateSnapshots {
        let rows = self.paths.iter().map(|p| times.iter().map(|&t| p.state_at(t)).collect()).collect();
        StateSnapshots::from_rows(times, rows)
    }

    /// `sup_t` of the empirical second moment over the bundle's uniform grid.
    pub fn sup_second_moment(&self) -> f64 {
        let cfg = &self.config;
        let n_grid = (cfg.horizon / cfg.dt).round() as usize;
        (0..=n_grid)
            .map(|k| {
                let t = (k as f64 * cfg.dt).min(cfg.horizon);
                self.paths.iter().map(|p| p.state_at(t).powi(2)).sum::<f64>() / self.paths.len() as f64
            })
            .fold(0.0, f64::max)
    }
}

/// Cross-sections of many paths: `values[j][i]` is path `i` at `times[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSnapshots {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl StateSnapshots {
    fn from_rows(times: &[f64], rows: Vec<Vec<f64>>) -> Self {
        let values = (0..times.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self { times: times.to_vec(), values }
    }
}

/// Left-Riemann running cost plus terminal cost along one path.
pub fn path_cost(path: &SamplePath, f: &RunningCost, g: &TerminalCost) -> f64 {
    let running: f64 = (0..path.steps()).map(|k| f.value(path.times[k], path.states[k], path.controls[k]) * (path.times[k + 1] - path.times[k])).sum();
    running + g.value(path.terminal())
}

pub fn evaluate_cost(bundle: &PathBundle, f: &RunningCost, g: &TerminalCost) -> Result<MonteCarloEstimate, SimError> {
    let values: Vec<f64> = bundle.paths.iter().map(|p| path_cost(p, f, g)).collect();
    MonteCarloEstimate::from_samples(&values)
}

/// Same as [`evaluate_cost`] but streams paths instead of storing a bundle.
pub fn estimate_cost(sim: &Simulator<'_>, x0: f64, f: &RunningCost, g: &TerminalCost) -> Result<MonteCarloEstimate, SimError> {
    let values = sim.map(x0, |p| path_cost(&p, f, g))?;
    MonteCarloEstimate::from_samples(&values)
}
