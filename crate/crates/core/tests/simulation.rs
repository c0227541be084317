use jumpctl_core::model::sample_jumps;
use jumpctl_core::rng::substream;
use jumpctl_core::sim::{estimate_cost, evaluate_cost};
use jumpctl_core::*;

fn no_control() -> ControlPolicy {
    ControlPolicy::constant(0.0)
}

fn pure_jumps(lambda: f64, size: JumpSize) -> ControlledSystem {
    ControlledSystem::new(DriftDecomposition::zero(), JumpModel::new(lambda, size, JumpMap::Identity).unwrap())
}

#[test]
fn poisson_count_has_mean_lambda_t() {
    let jumps = JumpModel::new(4.0, JumpSize::Fixed(1.0), JumpMap::Identity).unwrap();
    let counts: Vec<f64> = (0..100_000).map(|i| sample_jumps(&jumps, 2.0, &mut substream(11, i)).count() as f64).collect();
    let est = MonteCarloEstimate::from_samples(&counts).unwrap();
    assert!(est.within_se(8.0, 3.0), "{est:?}");
}

#[test]
fn compound_poisson_moments_of_the_marks() {
    let jumps = JumpModel::new(4.0, JumpSize::Normal { mean: 0.0, sd: 0.5 }, JumpMap::Identity).unwrap();
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    for i in 0..100_000 {
        let rec = sample_jumps(&jumps, 2.0, &mut substream(12, i));
        s1.push(rec.sizes.iter().sum::<f64>());
        s2.push(rec.sizes.iter().map(|z| z * z).sum::<f64>());
    }
    assert!(MonteCarloEstimate::from_samples(&s1).unwrap().within_se(0.0, 3.0));
    assert!(MonteCarloEstimate::from_samples(&s2).unwrap().within_se(2.0, 3.0));
}

#[test]
fn linear_ode_matches_exponential() {
    let sys =
        ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::linear_in_state(-1.0), PiecewiseLipschitzFn::zero(), StateDrift::zero()));
    let p = simulate_path(&sys, &no_control(), &SimConfig::new(1.0, 1e-4, 1, 0, 0.0), 1.0, &mut substream(0, 0)).unwrap();
    assert!((p.terminal() - 0.367879).abs() < 1e-3);
}

#[test]
fn unit_jumps_have_mean_lambda_t() {
    let bundle = simulate_bundle(&pure_jumps(4.0, JumpSize::Fixed(1.0)), &no_control(), &SimConfig::new(2.0, 0.1, 100_000, 5, 0.0), 0.0).unwrap();
    let est = MonteCarloEstimate::from_samples(&bundle.terminals()).unwrap();
    assert!(est.within_se(8.0, 3.0), "{est:?}");
}

#[test]
fn bundles_do_not_depend_on_the_worker_count() {
    let model = jumpctl_core::insurance::SurplusModel::baseline().with_claims(jumpctl_core::insurance::ClaimModel::CompoundPoisson);
    let sys = model.system().unwrap();
    let policy = jumpctl_core::insurance::sign_policy(2.0).unwrap();
    let cfg = model.sim_config(1.0, 1e-2, 64, 99);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_bundle(&sys, &policy, &cfg, 0.3).unwrap())
    };
    let (one, eight) = (run(1), run(8));
    for (a, b) in one.paths.iter().zip(&eight.paths) {
        let bytes = |p: &SamplePath| p.states().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(a), bytes(b));
    }
}

#[test]
fn neighbouring_seeds_give_different_increments() {
    let sys = ControlledSystem::without_jumps(DriftDecomposition::zero());
    let cfg = SimConfig::new(1.0, 0.01, 1, 7, 1.0);
    let a = simulate_bundle(&sys, &no_control(), &cfg, 0.0).unwrap();
    let b = simulate_bundle(&sys, &no_control(), &cfg.with_seed(8), 0.0).unwrap();
    assert_ne!(a.paths[0].brownian()[0], b.paths[0].brownian()[0]);
}

#[test]
fn brownian_terminal_variance() {
    let sys = ControlledSystem::without_jumps(DriftDecomposition::zero());
    let policy = no_control();
    let sim = Simulator::new(&sys, &policy, SimConfig::new(2.0, 0.05, 100_000, 3, 0.2)).unwrap();
    let est = estimate_cost(&sim, 0.0, &RunningCost::zero(), &TerminalCost::square()).unwrap();
    assert!(est.within_se(0.08, 3.0), "{est:?}");
}

#[test]
fn constant_path_cost_is_deterministic() {
    let sys = ControlledSystem::without_jumps(DriftDecomposition::zero());
    let bundle = simulate_bundle(&sys, &no_control(), &SimConfig::new(1.0, 0.1, 5, 1, 0.0), 3.0).unwrap();
    let est = evaluate_cost(&bundle, &RunningCost::zero(), &TerminalCost::square()).unwrap();
    assert_eq!((est.mean, est.std_err), (9.0, 0.0));
}

#[test]
fn piecewise_constant_drift_glues_the_ode_flows() {
    // b = -1 for x > 0 and +1 for x < 0: from 0.5 the flow reaches 0 at t = 0.5 and stays there.
    let b2 = PiecewiseLipschitzFn::step(0.0, 1.0, -1.0).unwrap();
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), b2, StateDrift::zero()));
    let dt = 1e-3;
    let p = simulate_path(&sys, &no_control(), &SimConfig::new(1.0, dt, 1, 0, 0.0), 0.5, &mut substream(0, 0)).unwrap();
    for (t, x) in p.times().iter().zip(p.states()) {
        let exact = (0.5 - t).max(0.0);
        assert!((x - exact).abs() <= 2.0 * dt, "t={t} x={x}");
    }
}

#[test]
fn weak_error_shrinks_with_the_step() {
    // E[X_T] for dX = -X dt + dB is exactly x0 e^{-T}; Euler gives x0 (1 - dt)^{T/dt}.
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), PiecewiseLipschitzFn::zero(), StateDrift::linear(-1.0)));
    let exact = (-1.0f64).exp();
    let bias = |dt: f64| {
        let b = simulate_bundle(&sys, &no_control(), &SimConfig::new(1.0, dt, 400_000, 17, 0.5), 1.0).unwrap();
        MonteCarloEstimate::from_samples(&b.terminals()).unwrap().mean - exact
    };
    let (coarse, fine) = (bias(0.1), bias(0.05));
    let ratio = coarse / fine;
    assert!((1.6..2.5).contains(&ratio), "coarse {coarse} fine {fine}");
}

#[test]
fn transformed_scheme_without_breakpoints_is_direct_euler() {
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), PiecewiseLipschitzFn::zero(), StateDrift::linear(-0.3)));
    let cfg = SimConfig::new(1.0, 0.01, 4, 21, 0.7);
    let a = simulate_bundle(&sys, &no_control(), &cfg, 0.2).unwrap();
    let b = simulate_bundle(&sys, &no_control(), &cfg.with_scheme(Scheme::Transformed), 0.2).unwrap();
    for (p, q) in a.paths.iter().zip(&b.paths) {
        assert_eq!(p.states(), q.states());
    }
}
