//! TOML run configuration.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected. A minimal file:
//!
//! ```toml
//! [model]
//! lambda = 2.0
//! tau = 0.5
//!
//! [sim]
//! T = 2.0
//! dt = 1e-3
//! n_paths = 100000
//! seed = 7
//! ```

use std::path::PathBuf;

use jumpctl_core::insurance::{PolicyConvention, SurplusModel, SweepAxis};
use jumpctl_core::sim::Scheme;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse { line: usize, field: Option<String>, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { horizon: 2.0, dt: 1e-3, n_paths: 10_000, seed: 1, scheme: Scheme::DirectEuler, threads: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub policy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Paths written to `bundle.csv` and `bundle.bin`; moments use all of them.
    pub export_paths: usize,
    pub dump: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { policy: "sign".into(), x0: None, export_paths: 100, dump: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Axis values; empty means the axis default.
    pub values: Vec<f64>,
    pub policies: Vec<String>,
    pub threshold: f64,
    pub convention: PolicyConvention,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Horizon,
            values: Vec::new(),
            policies: vec!["linear".into(), "threshold".into(), "sign".into()],
            threshold: 2.0,
            convention: PolicyConvention::Corrective,
        }
    }
}

impl SweepSection {
    pub fn axis_values(&self) -> Vec<f64> {
        if !self.values.is_empty() {
            return self.values.clone();
        }
        match self.axis {
            SweepAxis::Horizon => vec![0.25, 0.5, 1.0, 1.5, 2.0],
            SweepAxis::Lambda => vec![0.0, 0.5, 1.0, 2.0, 4.0],
            SweepAxis::Tau => vec![0.25, 0.5, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmpSection {
    pub outer_paths: usize,
    pub inner_paths: usize,
    pub inner_dt: f64,
    pub slice_times: Vec<f64>,
    pub grid_points: usize,
    pub band_eps: f64,
    pub z: f64,
    pub max_violation_fraction: f64,
    pub min_sign_frequency: f64,
}

impl Default for SmpSection {
    fn default() -> Self {
        Self {
            outer_paths: 200,
            inner_paths: jumpctl_core::smp::DEFAULT_INNER_PATHS,
            inner_dt: 1e-3,
            slice_times: (1..20).map(|k| k as f64 * 0.1).collect(),
            grid_points: 21,
            band_eps: 0.05,
            z: jumpctl_core::smp::DEFAULT_Z,
            max_violation_fraction: 0.05,
            min_sign_frequency: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollifySection {
    pub ns: Vec<u32>,
    pub policy: String,
}

impl Default for MollifySection {
    fn default() -> Self {
        Self { ns: vec![4, 16, 64, 256], policy: "sign".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub times: Vec<f64>,
    pub policy: String,
    /// `(n, t)` pairs for the last-jump gap identity.
    pub beta_checks: Vec<(u32, f64)>,
    pub n_mc: usize,
    pub max_band_ratio: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            times: vec![0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            policy: "sign".into(),
            beta_checks: vec![(1, 4.0), (2, 1.0), (3, 1.0)],
            n_mc: 200_000,
            max_band_ratio: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub simulate: SimulateSection,
    pub sweep: SweepSection,
    pub smp: SmpSection,
    pub mollify: MollifySection,
    pub diagnostics: DiagnosticsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), svg: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: SurplusModel,
    pub sim: SimSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        field: backticked(e.message()),
        message: e.message().trim().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, what: &str| {
            if !ok {
                errors.push(what.to_string());
            }
        };
        if let Err(e) = self.model.validate() {
            need(false, &e.to_string());
        }
        let s = &self.sim;
        need(s.horizon > 0.0 && s.horizon.is_finite(), "T > 0");
        need(s.dt > 0.0 && s.dt.is_finite(), "dt > 0");
        need(s.dt <= s.horizon, "dt <= T");
        need(s.n_paths >= 1, "n_paths >= 1");
        need(s.threads != Some(0), "threads >= 1");
        let sw = &self.experiment.sweep;
        need(!sw.policies.is_empty(), "sweep.policies non-empty");
        need(sw.axis_values().iter().all(|v| v.is_finite() && *v >= 0.0), "sweep.values >= 0");
        if sw.axis == SweepAxis::Horizon {
            need(sw.axis_values().iter().all(|&v| v >= s.dt), "sweep.values >= dt on the T axis");
        }
        let smp = &self.experiment.smp;
        need(smp.outer_paths >= 1 && smp.inner_paths >= 2, "smp.outer_paths >= 1 and smp.inner_paths >= 2");
        need(smp.inner_dt > 0.0, "smp.inner_dt > 0");
        need(smp.grid_points >= 2, "smp.grid_points >= 2");
        need(smp.slice_times.iter().all(|&t| t >= 0.0 && t < s.horizon), "smp.slice_times in [0, T)");
        need(smp.band_eps >= 0.0 && smp.z > 0.0, "smp.band_eps >= 0 and smp.z > 0");
        need(self.experiment.mollify.ns.iter().all(|&n| n >= 1), "mollify.ns >= 1");
        let d = &self.experiment.diagnostics;
        need(d.times.iter().all(|&t| t > 0.0 && t <= s.horizon), "diagnostics.times in (0, T]");
        need(d.beta_checks.iter().all(|&(n, t)| n >= 1 && t > 0.0), "diagnostics.beta_checks n >= 1 and t > 0");
        need(d.n_mc >= 2, "diagnostics.n_mc >= 2");
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(errors))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serialises")
    }

    /// SHA-256 of the canonical TOML form; line endings do not matter.
    pub fn hash(&self) -> String {
        config_hash(&self.to_toml())
    }
}

/// Hex SHA-256 of config text with `\r\n` normalised to `\n`.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.replace("\r\n", "\n").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
