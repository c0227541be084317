use jumpctl_core::insurance::{sign_policy, SurplusModel};
use jumpctl_core::mollify::{coupling_error, drift_error_integral, mollify};
use jumpctl_core::smp::DEFAULT_Z;
use jumpctl_core::*;

fn tanh_b2() -> PiecewiseLipschitzFn {
    PiecewiseLipschitzFn::smooth(SmoothPiece::new(|x| 0.5 * (5.0 * x).tanh(), |x| 2.5 / (5.0 * x).cosh().powi(2), 2.5, 0.5))
}

#[test]
fn continuous_drift_only_carries_the_smoothing_bias() {
    let sys = ControlledSystem::without_jumps(DriftDecomposition::new(ControlledDrift::zero(), tanh_b2(), StateDrift::linear(-1.0)));
    let cfg = SimConfig::new(1.0, 1e-3, 500, 8, 0.5);
    let e = coupling_error(&sys, 256, &ControlPolicy::constant(0.0), &cfg, 0.1).unwrap();
    assert!(e.mean < 1e-4, "{e:?}");
}

#[test]
fn paths_away_from_the_jumps_are_unchanged() {
    let model = SurplusModel { sigma: 0.0, lambda: 0.0, ..SurplusModel::baseline() };
    let sys = model.system().unwrap();
    let cfg = SimConfig::new(1.0, 1e-2, 3, 1, 0.0);
    let e = coupling_error(&sys, 16, &ControlPolicy::constant(0.0), &cfg, 3.0).unwrap();
    assert_eq!(e.mean, 0.0);
}

#[test]
fn coupled_errors_decrease_along_the_sequence() {
    let model = SurplusModel::baseline();
    let sys = model.system().unwrap();
    let policy = sign_policy(model.a_max).unwrap();
    let cfg = model.sim_config(2.0, 1e-3, 2_000, 9);
    let errors: Vec<MonteCarloEstimate> = [4, 16, 64, 256].iter().map(|&n| coupling_error(&sys, n, &policy, &cfg, model.x0).unwrap()).collect();
    for w in errors.windows(2) {
        assert!(w[1].mean <= w[0].mean + DEFAULT_Z * w[0].combined_se(&w[1]), "{errors:?}");
    }
}

#[test]
fn drift_error_integral_decreases_and_is_bounded() {
    let model = SurplusModel::baseline();
    let sys = model.system().unwrap();
    let bundle = simulate_bundle(&sys, &sign_policy(model.a_max).unwrap(), &model.sim_config(2.0, 1e-3, 2_000, 10), model.x0).unwrap();
    let b2 = &sys.drift.b2;
    let d16 = drift_error_integral(b2, &mollify(b2, 16).unwrap(), &bundle).unwrap();
    let d64 = drift_error_integral(b2, &mollify(b2, 64).unwrap(), &bundle).unwrap();
    assert!(d64.mean < d16.mean, "{d16:?} {d64:?}");
    let bound = (2.0 * b2.global_bound()).powi(4) * 2.0;
    assert!(d16.mean <= bound);
}
