use jumpctl_core::insurance::{sign_policy, SurplusModel};
use jumpctl_core::mollify::mollify;
use jumpctl_core::smp::*;
use jumpctl_core::*;

fn tanh_piece() -> PiecewiseLipschitzFn {
    PiecewiseLipschitzFn::smooth(
        SmoothPiece::new(|x| 0.5 * (5.0 * x).tanh(), |x| 2.5 / (5.0 * x).cosh().powi(2), 2.5, 0.5).with_antiderivative(|x| 0.1 * (5.0 * x).cosh().ln()),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fd_relative_errors(sys: &ControlledSystem, cfg: SimConfig, x0: f64) -> Vec<f64> {
    let policy = ControlPolicy::constant(0.0);
    let sim = Simulator::new(sys, &policy, cfg).unwrap();
    sim.map(x0, |p| {
        let phi = first_variation(&p, &sys.drift, cfg.sigma).unwrap().terminal();
        let fd = first_variation_fd(sys, cfg.sigma, &p, 1e-4).unwrap();
        (phi - fd).abs() / fd.abs()
    })
    .unwrap()
}

#[test]
fn smooth_drift_as_b3_matches_finite_differences() {
    let b3 = StateDrift::new(|x| -x + 0.5 * (5.0 * x).tanh(), |x| -1.0 + 2.5 / (5.0 * x).cosh().powi(2), 1.5);
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), PiecewiseLipschitzFn::zero(), b3));
    let rel = fd_relative_errors(&sys, SimConfig::new(1.0, 1e-3, 1_000, 31, 0.5), 0.1);
    assert!(median(rel) < 0.02);
}

#[test]
fn smooth_drift_through_the_b2_slot_matches_finite_differences() {
    // The Itô–Tanaka form replaces ∫ b2' du by a combination of stochastic
    // sums whose discretisation noise scales like √dt, hence the finer grid.
    let b2 = mollify(&tanh_piece(), 64).unwrap().as_piecewise();
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), b2, StateDrift::linear(-1.0)));
    let rel = fd_relative_errors(&sys, SimConfig::new(1.0, 1e-4, 400, 32, 0.5), 0.1);
    let m = median(rel);
    assert!(m < 0.02, "{m}");
}

#[test]
fn linear_flow_derivative() {
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), PiecewiseLipschitzFn::zero(), StateDrift::linear(-1.0)));
    let p = Simulator::new(&sys, &ControlPolicy::constant(0.0), SimConfig::new(2.0, 1e-3, 1, 0, 0.0)).unwrap().path(1.0, 0).unwrap();
    let fd = first_variation_fd(&sys, 0.0, &p, 1e-4).unwrap();
    assert!((fd - (-2.0f64).exp()).abs() < 1e-3);
    let fv = first_variation(&p, &sys.drift, 0.0).unwrap();
    assert_eq!(fv.terminal(), (-2.0f64).exp());
}

#[test]
fn mollified_surplus_first_variation_matches_finite_differences_on_average() {
    let model = SurplusModel::baseline();
    let exact = model.system().unwrap();
    let sys = ControlledSystem::new(exact.drift.with_b2(mollify(&exact.drift.b2, 64).unwrap().as_piecewise()), exact.jumps.clone());
    let policy = sign_policy(model.a_max).unwrap();
    let sigma = model.effective_sigma();
    // Starting near the threshold makes the discontinuity matter.
    let sim = Simulator::new(&sys, &policy, model.sim_config(1.0, 1e-3, 1_000, 33)).unwrap();
    let pairs = sim.map(1.0, |p| (first_variation(&p, &sys.drift, sigma).unwrap().terminal(), first_variation_fd(&sys, sigma, &p, 1e-4).unwrap())).unwrap();
    let phi = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let fd = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    assert!((phi - fd).abs() < 0.05 * fd.abs(), "{phi} {fd}");
}

#[test]
fn deterministic_moments_are_exponential() {
    let c = -0.4;
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::linear_in_state(c), PiecewiseLipschitzFn::zero(), StateDrift::zero()));
    let policy = ControlPolicy::constant(0.0);
    let sim = Simulator::new(&sys, &policy, SimConfig::new(1.5, 1e-2, 10, 0, 0.0)).unwrap();
    let phis = sim.map(0.3, |p| first_variation(&p, &sys.drift, 0.0).unwrap().terminal()).unwrap();
    for p in [1, 2, 4] {
        let m = moment_monitor(&phis, p).unwrap();
        assert!((m.mean - (p as f64 * c * 1.5).exp()).abs() < 1e-12);
        assert!(m.std_err < 1e-15);
    }
}

#[test]
fn second_moment_of_phi_is_stable_in_the_path_count() {
    let model = SurplusModel::baseline();
    let exact = model.system().unwrap();
    let sys = ControlledSystem::new(exact.drift.with_b2(mollify(&exact.drift.b2, 64).unwrap().as_piecewise()), exact.jumps.clone());
    let policy = sign_policy(model.a_max).unwrap();
    let sigma = model.effective_sigma();
    let est = |n, seed| {
        let sim = Simulator::new(&sys, &policy, model.sim_config(1.0, 1e-3, n, seed)).unwrap();
        moment_monitor(&sim.map(1.0, |p| first_variation(&p, &sys.drift, sigma).unwrap().terminal()).unwrap(), 2).unwrap()
    };
    let (small, large) = (est(500, 1), est(5_000, 2));
    assert!((small.mean - large.mean).abs() <= 3.0 * small.combined_se(&large), "{small:?} {large:?}");
}

#[test]
fn adjoint_at_the_symmetric_point_is_zero() {
    let model = SurplusModel::baseline();
    let sys = model.system().unwrap();
    let policy = sign_policy(model.a_max).unwrap();
    let inner = Simulator::new(&sys, &policy, model.sim_config(2.0, 1e-3, DEFAULT_INNER_PATHS, 40)).unwrap();
    let e = adjoint_nested_mc(&inner, 0.5, 0.0, &RunningCost::zero(), &TerminalCost::neg_square(), 0).unwrap();
    assert!(e.p.abs() <= 3.0 * e.std_err, "{e:?}");
}

#[test]
fn linear_gaussian_adjoint() {
    let delta = 0.3;
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), PiecewiseLipschitzFn::zero(), StateDrift::linear(-delta)));
    let policy = ControlPolicy::constant(0.0);
    let (f, g) = (RunningCost::zero(), TerminalCost::square());
    let cfg = SimConfig::new(1.0, 1e-3, DEFAULT_INNER_PATHS, 41, 0.4);
    let inner = Simulator::new(&sys, &policy, cfg).unwrap();
    for (k, (t, x)) in [(0.0, 0.8), (0.6, -1.1)].into_iter().enumerate() {
        let e = adjoint_nested_mc(&inner, t, x, &f, &g, k as u64).unwrap();
        assert!((e.p - 2.0 * x * (-2.0 * delta * (1.0 - t)).exp()).abs() <= 3.0 * e.std_err, "{e:?}");
    }
    let bundle = simulate_bundle(&sys, &policy, &cfg.with_paths(5_000), 0.5).unwrap();
    let surface = adjoint_regression(&bundle, &sys.drift, &f, &g, &[0.25, 0.5], DEFAULT_BASIS_DEGREE).unwrap();
    // The regression target 2 X_T Φ carries the terminal noise, so R² stays
    // well below one; the fitted conditional mean is what must match.
    for s in &surface.slices {
        for x in [0.2, 0.5, 0.8] {
            let exact = 2.0 * x * (-2.0 * delta * (1.0 - s.t)).exp();
            assert!((s.predict(x) - exact).abs() <= 3.0 * s.std_err(x) + 1e-3, "t={} x={x} {} vs {exact}", s.t, s.predict(x));
        }
    }
}

#[test]
fn deterministic_trajectory_keeps_the_sign_relation() {
    // σ = 0, x0 > H: the drift pulls toward zero but the state stays positive.
    let model = SurplusModel { sigma: 0.0, lambda: 0.0, delta: 0.05, ..SurplusModel::baseline() };
    let sys = model.system().unwrap();
    let policy = ControlPolicy::constant(0.1);
    let inner = Simulator::new(&sys, &policy, SimConfig::new(1.0, 1e-2, 1, 0, 0.0)).unwrap();
    let (f, g) = (RunningCost::zero(), TerminalCost::neg_square());
    let points: Vec<ScanPoint> = [0.0, 0.3, 0.6, 0.9]
        .iter()
        .map(|&t| {
            let x = inner.path_from(0.0, 3.0, &mut jumpctl_core::rng::substream(0, 0)).unwrap().state_at(t);
            ScanPoint { t, x, a_hat: 0.1, adjoint: adjoint_nested_mc(&inner, t, x, &f, &g, 0).unwrap() }
        })
        .collect();
    let rel = sign_relation_check(&points, 0.05, DEFAULT_Z);
    assert_eq!(rel.frequency, 1.0);
    assert_eq!(rel.raw_frequency, 1.0);
    assert_eq!(rel.n_counted, 4);
}

#[test]
fn boundary_control_with_matching_gradient_passes_the_scan() {
    let model = SurplusModel::baseline();
    let sys = model.system().unwrap();
    let ctx = HamiltonianCtx::new(RunningCost::zero(), &sys);
    // b1 = -a, so ∂ₐH = -p; with p < 0 the maximiser sits at a = +2.
    let adjoint = AdjointEstimate { t: 0.5, x: 0.4, p: -0.3, std_err: 0.01, method: AdjointMethod::NestedMc };
    let points = [ScanPoint { t: 0.5, x: 0.4, a_hat: 2.0, adjoint }];
    let scan = necessary_condition_scan(&points, &ctx, &model.control_set().grid(11), 0.05, Sense::Maximise, DEFAULT_Z);
    assert!(scan.min_product >= 0.0);
    assert_eq!(scan.n_violations, 0);
    assert_eq!(ctx.hamiltonian_da(0.5, 0.4, -0.3, 1.0), 0.3);
}
