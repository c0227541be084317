use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jumpctl_cli::config::{parse_config, RunConfig};
use jumpctl_cli::run::{exit_code, run, Command};
use jumpctl_core::insurance::SweepAxis;
use jumpctl_core::sim::Scheme;

#[derive(Parser)]
#[command(name = "jumpctl", version, about = "Simulation and verification toolkit for controlled jump-diffusions")]
struct Cli {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; JUMPCTL_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Default)]
struct SimFlags {
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon T.
    #[arg(long = "horizon", short = 'T')]
    horizon: Option<f64>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a path bundle and export it.
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        export_paths: Option<usize>,
    },
    /// E[X_T²] along T, lambda or tau for a set of policies.
    Sweep {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long, value_parser = parse_axis)]
        axis: Option<SweepAxis>,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
    },
    /// Necessary-condition scan and sign relation under the sign policy.
    SmpCheck {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        outer_paths: Option<usize>,
        #[arg(long)]
        inner_paths: Option<usize>,
    },
    /// Coupled errors of the mollified drift.
    MollifyCheck {
        #[command(flatten)]
        sim: SimFlags,
        /// Comma-separated mollifier indices.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<u32>>,
    },
    /// Breakpoints, bump radius and invertibility of G.
    TransformCheck,
    /// Density-bound scan and last-jump gap identity.
    Diagnostics {
        #[command(flatten)]
        sim: SimFlags,
        /// `n=<int> t=<float>` pair to check; repeat the flag for more.
        #[arg(long, num_args = 2, value_names = ["n=N", "t=T"], action = clap::ArgAction::Append)]
        beta_check: Option<Vec<String>>,
        #[arg(long)]
        n_mc: Option<usize>,
        /// Skip the density scan.
        #[arg(long)]
        no_density: bool,
    },
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    SweepAxis::parse(s).ok_or_else(|| format!("unknown axis `{s}` (expected T, lambda or tau)"))
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "direct" | "direct_euler" => Ok(Scheme::DirectEuler),
        "transformed" => Ok(Scheme::Transformed),
        _ => Err(format!("unknown scheme `{s}` (expected direct or transformed)")),
    }
}

fn parse_beta_pairs(raw: &[String]) -> Result<Vec<(u32, f64)>, String> {
    raw.chunks(2)
        .map(|pair| {
            let (mut n, mut t) = (None, None);
            for item in pair {
                match item.split_once('=') {
                    Some(("n", v)) => n = Some(v.parse::<u32>().map_err(|e| format!("n: {e}"))?),
                    Some(("t", v)) => t = Some(v.parse::<f64>().map_err(|e| format!("t: {e}"))?),
                    _ => return Err(format!("expected n=<int> or t=<float>, got `{item}`")),
                }
            }
            Ok((n.ok_or("missing n=")?, t.ok_or("missing t=")?))
        })
        .collect()
}

fn apply_sim(cfg: &mut RunConfig, f: &SimFlags) {
    let s = &mut cfg.sim;
    s.n_paths = f.n_paths.unwrap_or(s.n_paths);
    s.dt = f.dt.unwrap_or(s.dt);
    s.seed = f.seed.unwrap_or(s.seed);
    s.horizon = f.horizon.unwrap_or(s.horizon);
    s.scheme = f.scheme.unwrap_or(s.scheme);
}

fn configure(cli: &Cli) -> Result<(Command, RunConfig), String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    let env_threads = std::env::var("JUMPCTL_THREADS").ok().map(|v| v.parse::<usize>().map_err(|e| format!("JUMPCTL_THREADS: {e}"))).transpose()?;
    cfg.sim.threads = env_threads.or(cli.threads).or(cfg.sim.threads);
    let e = &mut cfg.experiment;
    let command = match &cli.command {
        Cmd::Simulate { sim, policy, x0, export_paths } => {
            e.simulate.policy = policy.clone().unwrap_or(e.simulate.policy.clone());
            e.simulate.x0 = x0.or(e.simulate.x0);
            e.simulate.export_paths = export_paths.unwrap_or(e.simulate.export_paths);
            apply_sim(&mut cfg, sim);
            Command::Simulate
        }
        Cmd::Sweep { sim, axis, values, policies } => {
            if let Some(axis) = axis {
                if *axis != e.sweep.axis && values.is_none() {
                    e.sweep.values.clear();
                }
                e.sweep.axis = *axis;
            }
            e.sweep.values = values.clone().unwrap_or(e.sweep.values.clone());
            e.sweep.policies = policies.clone().unwrap_or(e.sweep.policies.clone());
            apply_sim(&mut cfg, sim);
            Command::Sweep
        }
        Cmd::SmpCheck { sim, outer_paths, inner_paths } => {
            e.smp.outer_paths = outer_paths.unwrap_or(e.smp.outer_paths);
            e.smp.inner_paths = inner_paths.unwrap_or(e.smp.inner_paths);
            apply_sim(&mut cfg, sim);
            Command::SmpCheck
        }
        Cmd::MollifyCheck { sim, n } => {
            e.mollify.ns = n.clone().unwrap_or(e.mollify.ns.clone());
            apply_sim(&mut cfg, sim);
            Command::MollifyCheck
        }
        Cmd::TransformCheck => Command::TransformCheck,
        Cmd::Diagnostics { sim, beta_check, n_mc, no_density } => {
            if let Some(raw) = beta_check {
                e.diagnostics.beta_checks = parse_beta_pairs(raw)?;
            }
            e.diagnostics.n_mc = n_mc.unwrap_or(e.diagnostics.n_mc);
            if *no_density {
                e.diagnostics.times.clear();
            }
            apply_sim(&mut cfg, sim);
            Command::Diagnostics
        }
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((command, cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, cfg) = match configure(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cfg.sim.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = run(command, &cfg);
    match &result {
        Ok(o) => println!("{} {}: {}", command.name(), if o.passed { "ok" } else { "FAILED" }, o.summary),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result))
}
