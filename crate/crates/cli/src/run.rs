//! Subcommand dispatch and artifact emission.
//!
//! Every run writes its artifacts plus `manifest.json` into the output
//! directory. File formats:
//!
//! | command           | files |
//! |-------------------|-------|
//! | `simulate`        | `bundle.csv` (path_id,t,x,a,dB,jump_z), `bundle.bin`, `summary.json` |
//! | `sweep`           | `sweep_<axis>.csv` (axis_value,policy,mean,ci95,n), `sweep_<axis>.svg` |
//! | `smp-check`       | `smp_report.json`, `smp_slices.csv` (t,n_points,mean_x,mean_p,mean_se,n_resolved,sign_frequency) |
//! | `mollify-check`   | `mollify.csv` (n,coupling_error,coupling_ci95,drift_error_integral,drift_ci95) |
//! | `transform-check` | `transform.csv` (model,xi,alpha,c,min_g_prime,round_trip_error) |
//! | `diagnostics`     | `density.csv` (t,sup_density,scaled,bandwidth), `beta.csv` (n,t,mc,analytic,se) |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use jumpctl_core::diagnostics::{last_jump_gap_moment, scan_snapshots};
use jumpctl_core::insurance::{non_decreasing_within, policy_library_with, sweep, SurplusModel, SweepConfig};
use jumpctl_core::io::{write_csv, write_dump};
use jumpctl_core::mollify::{coupling_error, drift_error_integral, mollify};
use jumpctl_core::smp::{verify_maximum_principle, Sense, SmpCheckConfig, SmpReport};
use jumpctl_core::stats::{MonteCarloEstimate, Z95};
use jumpctl_core::transform::{discontinuity_coefficients, TransformG};
use jumpctl_core::{simulate_bundle, ControlPolicy, ModelError, RunningCost, SimConfig, SimError, SmpError, TerminalCost, TransformError};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::svg::{emit_svg, Labels, Series, SvgError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Sweep,
    SmpCheck,
    MollifyCheck,
    TransformCheck,
    Diagnostics,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::SmpCheck => "smp-check",
            Command::MollifyCheck => "mollify-check",
            Command::TransformCheck => "transform-check",
            Command::Diagnostics => "diagnostics",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("sim: {0}")]
    Sim(#[from] SimError),
    #[error("smp: {0}")]
    Smp(#[from] SmpError),
    #[error("transform: {0}")]
    Transform(#[from] TransformError),
    #[error("svg: {0}")]
    Svg(#[from] SvgError),
    #[error("unknown policy `{0}` (expected linear, threshold or sign)")]
    UnknownPolicy(String),
    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JobSeed {
    pub job: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub wall_time_secs: f64,
    pub threads: usize,
    pub seeds: Vec<JobSeed>,
    pub artifacts: Vec<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub summary: String,
    pub manifest: RunManifest,
}

/// 0 on success, 2 when an acceptance threshold is missed, 1 on error.
pub fn exit_code(result: &Result<Outcome, RunError>) -> u8 {
    match result {
        Ok(o) if o.passed => 0,
        Ok(_) => 2,
        Err(_) => 1,
    }
}

struct Job<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    seeds: Vec<JobSeed>,
    artifacts: Vec<String>,
}

struct Report {
    passed: bool,
    summary: String,
}

impl Job<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|source| RunError::Io { path: path.clone(), source })?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn write_with<F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>>(&mut self, name: &str, f: F) -> Result<(), RunError> {
        let mut out = self.create(name)?;
        f(&mut out).and_then(|_| out.flush()).map_err(|source| RunError::Io { path: self.path(name), source })
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(value).expect("report types serialise");
        self.write_with(name, |out| writeln!(out, "{text}"))
    }

    fn seed(&mut self, job: &str, seed: u64) {
        self.seeds.push(JobSeed { job: job.to_string(), seed });
    }

    fn model(&self) -> &SurplusModel {
        &self.cfg.model
    }

    fn sim_config(&self, n_paths: usize) -> SimConfig {
        let s = &self.cfg.sim;
        self.model().sim_config(s.horizon, s.dt, n_paths, s.seed).with_scheme(s.scheme)
    }

    fn policy(&self, name: &str) -> Result<ControlPolicy, RunError> {
        let sw = &self.cfg.experiment.sweep;
        policy_library_with(self.model().a_max, sw.threshold, sw.convention)?
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| RunError::UnknownPolicy(name.to_string()))
    }
}

/// Runs `command` and writes its artifacts and manifest under `cfg.output.dir`.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
    let mut job = Job { cfg, dir: &dir, seeds: Vec::new(), artifacts: Vec::new() };
    let report = match command {
        Command::Simulate => simulate(&mut job)?,
        Command::Sweep => run_sweep(&mut job)?,
        Command::SmpCheck => smp_check(&mut job)?,
        Command::MollifyCheck => mollify_check(&mut job)?,
        Command::TransformCheck => transform_check(&mut job)?,
        Command::Diagnostics => diagnostics(&mut job)?,
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        seeds: job.seeds,
        artifacts: job.artifacts,
        passed: report.passed,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(|source| RunError::Io { path, source })?;
    Ok(Outcome { passed: report.passed, summary: report.summary, manifest })
}

#[derive(Serialize)]
struct SimulateSummary {
    policy: String,
    x0: f64,
    n_paths: usize,
    exported_paths: usize,
    terminal_mean: MonteCarloEstimate,
    terminal_second_moment: MonteCarloEstimate,
}

fn simulate(job: &mut Job) -> Result<Report, RunError> {
    let s = &job.cfg.experiment.simulate;
    let system = job.model().system()?;
    let policy = job.policy(&s.policy)?;
    let x0 = s.x0.unwrap_or(job.model().x0);
    let cfg = job.sim_config(job.cfg.sim.n_paths);
    job.seed("simulate", cfg.seed);
    let terminals = jumpctl_core::Simulator::new(&system, &policy, cfg)?.map(x0, |p| p.terminal())?;
    let squares: Vec<f64> = terminals.iter().map(|x| x * x).collect();
    // Substreams are per path index, so the exported bundle is a prefix of the full run.
    let exported = s.export_paths.min(cfg.n_paths);
    let bundle = simulate_bundle(&system, &policy, &cfg.with_paths(exported), x0)?;
    job.write_with("bundle.csv", |out| write_csv(&bundle, out))?;
    if s.dump {
        job.write_with("bundle.bin", |out| write_dump(&bundle, out))?;
    }
    let summary = SimulateSummary {
        policy: policy.name().to_string(),
        x0,
        n_paths: cfg.n_paths,
        exported_paths: exported,
        terminal_mean: MonteCarloEstimate::from_samples(&terminals)?,
        terminal_second_moment: MonteCarloEstimate::from_samples(&squares)?,
    };
    job.write_json("summary.json", &summary)?;
    let m = summary.terminal_second_moment;
    Ok(Report { passed: true, summary: format!("E[X_T²] = {:.6} ± {:.6} over {} paths", m.mean, Z95 * m.std_err, m.n) })
}

fn run_sweep(job: &mut Job) -> Result<Report, RunError> {
    let sw = &job.cfg.experiment.sweep;
    let policies = sw.policies.iter().map(|name| job.policy(name)).collect::<Result<Vec<_>, _>>()?;
    let s = &job.cfg.sim;
    let scfg = SweepConfig { horizon: s.horizon, dt: s.dt, n_paths: s.n_paths, seed: s.seed, scheme: s.scheme };
    let values = sw.axis_values();
    let result = sweep(job.model(), &policies, sw.axis, &values, &scfg)?;
    job.seed("sweep", s.seed);
    let axis = sw.axis.name();
    job.write_with(&format!("sweep_{axis}.csv"), |out| {
        writeln!(out, "axis_value,policy,mean,ci95,n")?;
        for p in &result.points {
            writeln!(out, "{},{},{},{},{}", p.value, p.policy, p.estimate.mean, Z95 * p.estimate.std_err, p.estimate.n)?;
        }
        Ok(())
    })?;
    let series: Vec<Series> = result
        .policies()
        .into_iter()
        .map(|name| {
            let points = result.series(&name).iter().map(|p| (p.value, p.estimate.mean, Z95 * p.estimate.std_err)).collect();
            Series { label: name, points }
        })
        .collect();
    if job.cfg.output.svg {
        let name = format!("sweep_{axis}.svg");
        let labels = Labels { title: format!("E[X_T²] against {axis}"), x: axis.to_string(), y: "E[X_T²]".into() };
        emit_svg(&series, &labels, &job.path(&name))?;
        job.artifacts.push(name);
    }
    let monotone: Vec<String> = result
        .policies()
        .iter()
        .map(|name| {
            let est: Vec<MonteCarloEstimate> = result.series(name).iter().map(|p| p.estimate).collect();
            format!("{name}: {}", if non_decreasing_within(&est, Z95) { "non-decreasing" } else { "not monotone" })
        })
        .collect();
    Ok(Report { passed: true, summary: format!("{} points along {axis}; {}", result.points.len(), monotone.join(", ")) })
}

#[derive(Serialize)]
struct ProbeRow {
    t: f64,
    x: f64,
    a_hat: f64,
    p: f64,
    std_err: f64,
}

#[derive(Serialize)]
struct SmpJson {
    min_product: f64,
    violation_fraction: f64,
    n_products: usize,
    n_violations: usize,
    n_excluded: usize,
    sign_relation_frequency: f64,
    sign_relation_resolved: usize,
    sign_relation_raw_frequency: f64,
    sign_relation_counted: usize,
    max_violation_fraction: f64,
    min_sign_frequency: f64,
    passed: bool,
    adjoint_probe_table: Vec<ProbeRow>,
}

fn smp_check(job: &mut Job) -> Result<Report, RunError> {
    let e = &job.cfg.experiment.smp;
    let model = *job.model();
    let system = model.system()?;
    let policy = job.policy("sign")?;
    let cfg = SmpCheckConfig {
        outer: job.sim_config(e.outer_paths),
        x0: model.x0,
        inner_paths: e.inner_paths,
        inner_dt: e.inner_dt,
        slice_times: e.slice_times.clone(),
        grid_a: model.control_set().grid(e.grid_points),
        band_eps: e.band_eps,
        sense: Sense::Maximise,
        z: e.z,
    };
    job.seed("smp-outer", cfg.outer.seed);
    let r: SmpReport = verify_maximum_principle(&system, &policy, &RunningCost::zero(), &TerminalCost::neg_square(), &cfg)?;
    let passed = r.scan.violation_fraction <= e.max_violation_fraction && r.sign.frequency >= e.min_sign_frequency;
    let report = SmpJson {
        min_product: r.scan.min_product,
        violation_fraction: r.scan.violation_fraction,
        n_products: r.scan.n_products,
        n_violations: r.scan.n_violations,
        n_excluded: r.scan.n_excluded,
        sign_relation_frequency: r.sign.frequency,
        sign_relation_resolved: r.sign.n_resolved,
        sign_relation_raw_frequency: r.sign.raw_frequency,
        sign_relation_counted: r.sign.n_counted,
        max_violation_fraction: e.max_violation_fraction,
        min_sign_frequency: e.min_sign_frequency,
        passed,
        adjoint_probe_table: r.points.iter().map(|p| ProbeRow { t: p.t, x: p.x, a_hat: p.a_hat, p: p.adjoint.p, std_err: p.adjoint.std_err }).collect(),
    };
    job.write_json("smp_report.json", &report)?;
    let (band, z) = (e.band_eps, e.z);
    job.write_with("smp_slices.csv", |out| {
        writeln!(out, "t,n_points,mean_x,mean_p,mean_se,n_resolved,sign_frequency")?;
        for &t in &cfg.slice_times {
            let pts: Vec<_> = r.points.iter().filter(|p| p.t == t).collect();
            let n = pts.len() as f64;
            let mean = |f: &dyn Fn(&&jumpctl_core::smp::ScanPoint) -> f64| pts.iter().map(f).sum::<f64>() / n;
            let resolved: Vec<_> = pts.iter().filter(|p| p.x.abs() >= band && p.x != 0.0 && p.adjoint.resolved(z)).collect();
            let agree = resolved.iter().filter(|p| p.adjoint.p.signum() == -p.x.signum()).count();
            let freq = if resolved.is_empty() { f64::NAN } else { agree as f64 / resolved.len() as f64 };
            writeln!(out, "{t},{},{},{},{},{},{freq}", pts.len(), mean(&|p| p.x), mean(&|p| p.adjoint.p), mean(&|p| p.adjoint.std_err), resolved.len())?;
        }
        Ok(())
    })?;
    Ok(Report {
        passed,
        summary: format!(
            "violation fraction {:.4} (max {}), sign relation {:.3} over {} resolved (min {})",
            r.scan.violation_fraction, e.max_violation_fraction, r.sign.frequency, r.sign.n_resolved, e.min_sign_frequency
        ),
    })
}

fn mollify_check(job: &mut Job) -> Result<Report, RunError> {
    let e = &job.cfg.experiment.mollify;
    let system = job.model().system()?;
    let policy = job.policy(&e.policy)?;
    let cfg = job.sim_config(job.cfg.sim.n_paths);
    let x0 = job.model().x0;
    job.seed("mollify", cfg.seed);
    let bundle = simulate_bundle(&system, &policy, &cfg, x0)?;
    let mut rows = Vec::new();
    for &n in &e.ns {
        let coupling = coupling_error(&system, n, &policy, &cfg, x0)?;
        let drift = drift_error_integral(&system.drift.b2, &mollify(&system.drift.b2, n)?, &bundle)?;
        rows.push((n, coupling, drift));
    }
    job.write_with("mollify.csv", |out| {
        writeln!(out, "n,coupling_error,coupling_ci95,drift_error_integral,drift_ci95")?;
        for (n, c, d) in &rows {
            writeln!(out, "{n},{},{},{},{}", c.mean, Z95 * c.std_err, d.mean, Z95 * d.std_err)?;
        }
        Ok(())
    })?;
    let mut order: Vec<_> = rows.iter().collect();
    order.sort_by_key(|r| r.0);
    let reversed = |pick: fn(&&(u32, MonteCarloEstimate, MonteCarloEstimate)) -> MonteCarloEstimate| order.iter().rev().map(pick).collect::<Vec<_>>();
    let coupling_ok = non_decreasing_within(&reversed(|r| r.1), Z95);
    let drift_ok = non_decreasing_within(&reversed(|r| r.2), Z95);
    Ok(Report {
        passed: coupling_ok && drift_ok,
        summary: format!(
            "coupling errors {}; drift errors {}",
            if coupling_ok { "non-increasing" } else { "increase beyond CI" },
            if drift_ok { "non-increasing" } else { "increase beyond CI" }
        ),
    })
}

fn transform_check(job: &mut Job) -> Result<Report, RunError> {
    let model = *job.model();
    let system = model.system()?;
    let coeffs = discontinuity_coefficients(&system.drift)?;
    let g = TransformG::from_coefficients(&coeffs)?;
    let min_prime = g.min_prime_on(-10.0, 10.0, 200_001);
    let round_trip = g.round_trip_error_on(-10.0, 10.0, 20_001)?;
    let fixed = g.breakpoints().iter().map(|&xi| (g.eval(xi) - xi).abs()).fold(0.0, f64::max);
    job.write_with("transform.csv", |out| {
        writeln!(out, "model,xi,alpha,c,min_g_prime,round_trip_error")?;
        for (xi, alpha) in g.breakpoints().iter().zip(g.alphas()) {
            writeln!(out, "surplus,{xi},{alpha},{},{min_prime},{round_trip}", g.c())?;
        }
        Ok(())
    })?;
    let passed = min_prime > 0.0 && round_trip < 1e-10 && fixed <= f64::EPSILON;
    Ok(Report { passed, summary: format!("c = {}, min G' = {min_prime:.4}, round trip {round_trip:.1e}", g.c()) })
}

fn diagnostics(job: &mut Job) -> Result<Report, RunError> {
    let e = &job.cfg.experiment.diagnostics;
    let mut passed = true;
    let mut summary = Vec::new();
    if !e.times.is_empty() {
        let system = job.model().system()?;
        let policy = job.policy(&e.policy)?;
        let cfg = job.sim_config(job.cfg.sim.n_paths);
        job.seed("density", cfg.seed);
        let snaps = jumpctl_core::Simulator::new(&system, &policy, cfg)?.snapshots(job.model().x0, &e.times)?;
        let scan = scan_snapshots(&snaps)?;
        job.write_with("density.csv", |out| {
            writeln!(out, "t,sup_density,scaled,bandwidth")?;
            for k in 0..scan.times.len() {
                writeln!(out, "{},{},{},{}", scan.times[k], scan.sup_density[k], scan.scaled[k], scan.bandwidth[k])?;
            }
            Ok(())
        })?;
        let ratio = scan.band_ratio();
        passed &= ratio <= e.max_band_ratio;
        summary.push(format!("band ratio {ratio:.3} (max {})", e.max_band_ratio));
    }
    if !e.beta_checks.is_empty() {
        let seed = job.cfg.sim.seed;
        let mut rows = Vec::new();
        for (k, &(n, t)) in e.beta_checks.iter().enumerate() {
            // Given the jump count the epochs are uniform, so the intensity drops out.
            let check = last_jump_gap_moment(1.0, t, n, e.n_mc, seed.wrapping_add(k as u64))?;
            job.seed(&format!("beta n={n} t={t}"), seed.wrapping_add(k as u64));
            passed &= check.within_se(3.0);
            rows.push(check);
        }
        job.write_with("beta.csv", |out| {
            writeln!(out, "n,t,mc,analytic,se")?;
            for c in &rows {
                writeln!(out, "{},{},{},{},{}", c.n, c.t, c.mc_estimate.mean, c.analytic, c.mc_estimate.std_err)?;
            }
            Ok(())
        })?;
        let worst = rows.iter().map(|c| (c.mc_estimate.mean - c.analytic).abs() / c.mc_estimate.std_err).fold(0.0, f64::max);
        summary.push(format!("beta identity worst |z| {worst:.2}"));
    }
    Ok(Report { passed, summary: summary.join("; ") })
}
