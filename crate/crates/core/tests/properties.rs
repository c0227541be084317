use jumpctl_core::diagnostics::beta_half;
use jumpctl_core::mollify::mollify;
use jumpctl_core::rng::substream;
use jumpctl_core::smp::first_variation;
use jumpctl_core::transform::{discontinuity_coefficients, select_c};
use jumpctl_core::*;
use proptest::prelude::*;

fn threshold_drift(beta: f64, h: f64) -> DriftDecomposition {
    DriftDecomposition::new(ControlledDrift::linear_in_control(-1.0), PiecewiseLipschitzFn::symmetric_threshold(beta, h).unwrap(), StateDrift::linear(-0.05))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_is_increasing_and_invertible(beta in 0.05f64..3.0, h in 0.1f64..3.0, x in -8.0f64..8.0) {
        let coeffs = discontinuity_coefficients(&threshold_drift(beta, h)).unwrap();
        let g = TransformG::new(&coeffs, select_c(&coeffs).unwrap()).unwrap();
        prop_assert!(g.prime(x) > 0.0);
        prop_assert!((g.inverse(g.eval(x)).unwrap() - x).abs() < 1e-10);
        for &xi in g.breakpoints() {
            prop_assert_eq!(g.eval(xi), xi);
        }
    }

    #[test]
    fn selected_radius_keeps_bumps_apart(xs in prop::collection::btree_set(-500i32..500, 1..6), alpha in 0.1f64..5.0) {
        let coeffs: Vec<(f64, f64)> = xs.iter().map(|&k| (k as f64 * 0.01, if k % 2 == 0 { alpha } else { -alpha })).collect();
        let c = select_c(&coeffs).unwrap();
        for w in coeffs.windows(2) {
            prop_assert!(2.0 * c < w[1].0 - w[0].0);
        }
        prop_assert!(c * alpha * 6.0 < 1.0);
    }

    #[test]
    fn policies_stay_in_the_control_set(x in -50.0f64..50.0, a in 0.1f64..5.0, gain in -3.0f64..3.0) {
        let bounds = ControlSet::symmetric(a).unwrap();
        for kind in [PolicyKind::LinearFeedback { gain, offset: 0.0 }, PolicyKind::Sign { magnitude: a }, PolicyKind::Threshold { level: 1.0, value: gain }] {
            let v = ControlPolicy::new("p", kind, bounds).eval(0.0, x);
            prop_assert!(v.abs() <= a);
        }
    }

    #[test]
    fn mollified_drift_is_bounded_and_exact_far_from_jumps(beta in 0.1f64..2.0, h in 0.5f64..2.0, n in 2u32..300, x in -5.0f64..5.0) {
        let b2 = PiecewiseLipschitzFn::symmetric_threshold(beta, h).unwrap();
        let m = mollify(&b2, n).unwrap();
        prop_assert!(m.value(x).abs() <= beta + 1e-12);
        if (x.abs() - h).abs() > 1.0 / n as f64 {
            prop_assert!((m.value(x) - b2.value(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn antiderivative_is_additive(beta in 0.1f64..2.0, h in 0.2f64..2.0, a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let b2 = PiecewiseLipschitzFn::symmetric_threshold(beta, h).unwrap();
        prop_assert!((b2.antiderivative(b) - b2.antiderivative(a) - b2.integral(a, b)).abs() < 1e-12);
        // Odd integrand: the antiderivative from 0 is even.
        prop_assert!((b2.antiderivative(a) - b2.antiderivative(-a)).abs() < 1e-12);
    }

    #[test]
    fn first_variation_is_a_positive_cocycle(seed in 0u64..1_000, x0 in -2.0f64..2.0, s in 0.05f64..0.95) {
        let drift = threshold_drift(1.0, 1.0);
        let sys = ControlledSystem::without_jumps(drift.clone());
        let cfg = SimConfig::new(1.0, 0.01, 1, seed, 0.6);
        let p = simulate_path(&sys, &ControlPolicy::constant(0.5), &cfg, x0, &mut substream(seed, 0)).unwrap();
        let fv = first_variation(&p, &drift, 0.6).unwrap();
        let whole = fv.phi(0.0, 1.0).unwrap();
        prop_assert!(whole > 0.0);
        prop_assert!((fv.phi(0.0, s).unwrap() * fv.phi(s, 1.0).unwrap() / whole - 1.0).abs() < 1e-10);
    }

    #[test]
    fn same_seed_same_bundle(seed in any::<u64>(), x0 in -1.0f64..1.0) {
        let jumps = JumpModel::new(3.0, JumpSize::Normal { mean: 0.1, sd: 0.3 }, JumpMap::Negate).unwrap();
        let sys = ControlledSystem::new(threshold_drift(1.0, 1.0), jumps);
        let cfg = SimConfig::new(0.5, 0.05, 4, seed, 0.4);
        let policy = ControlPolicy::constant(0.0);
        let a = simulate_bundle(&sys, &policy, &cfg, x0).unwrap();
        let b = simulate_bundle(&sys, &policy, &cfg, x0).unwrap();
        for (p, q) in a.paths.iter().zip(&b.paths) {
            prop_assert_eq!(p.states(), q.states());
            prop_assert!(p.times().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn beta_recurrence_is_decreasing_and_positive(n in 1u32..200) {
        prop_assert!(beta_half(n) > 0.0);
        prop_assert!(beta_half(n + 1) < beta_half(n));
    }
}
