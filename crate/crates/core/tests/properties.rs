use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_growth::gaussian::GaussianModel;
use robust_growth::pairs::{ctou_model, ctou_sigma, spread_to_holdings, CtouParams, StochVol, StochVolParams, TDist, TDistParams};
use robust_growth::sim::boxplot_stats;

fn ctou_params() -> impl Strategy<Value = CtouParams> {
    (0.01f64..0.2, 0.005f64..0.1, 0.2f64..3.0, 0.1f64..3.0)
        .prop_map(|(c_x, c_y, kappa_x, kappa_y)| CtouParams { c_x, c_y, kappa_x, kappa_y })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ctou_stationary_covariance_is_spd(p in ctou_params()) {
        let s = ctou_sigma(&p);
        prop_assert!(s[(0, 0)] > 0.0);
        prop_assert!(s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)] > 0.0);
        prop_assert!((s[(0, 1)] - s[(1, 0)]).abs() < 1e-15);
    }

    #[test]
    fn ctou_worst_case_dynamics_keep_the_law(p in ctou_params()) {
        let m = ctou_model(&p).unwrap();
        let star = m.worst_case_star();
        let tol = 1e-10 * m.sigma.amax().max(1.0) * star.k.amax().max(1.0);
        prop_assert!(star.lyapunov_residual(&m.sigma) < tol);
        prop_assert!(m.worst_case_hat().lyapunov_residual(&m.sigma) < tol);
    }

    #[test]
    fn growth_gap_is_nonnegative(seed in any::<u64>(), d in 1usize..=3, m in 1usize..=3) {
        let model = GaussianModel::random(d, m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(model.lambda_pi() > 0.0);
        prop_assert!(model.growth_gap() >= -1e-12 * model.lambda_p());
        let degenerate = model.rebuild_with_beta_x(model.degenerate_beta_x()).unwrap();
        prop_assert!(degenerate.growth_gap().abs() < 1e-9);
    }

    #[test]
    fn tdist_strategies_are_odd(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let t = TDist::new(TDistParams::default()).unwrap();
        prop_assert!((t.theta_star(x, y) + t.theta_star(-x, -y)).abs() < 1e-12);
        prop_assert!((t.theta_hat(x) + t.theta_hat(-x)).abs() < 1e-12);
    }

    #[test]
    fn stochvol_theta_star_is_odd_in_x_without_correlation(x in -1.0f64..1.0, y in 0.01f64..0.1) {
        let s = StochVol::new(StochVolParams::default()).unwrap();
        let a = s.theta_star(x, y).unwrap();
        let b = s.theta_star(-x, y).unwrap();
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn holdings_are_linear_and_hedged(t1 in -50.0f64..50.0, t2 in -50.0f64..50.0, w in 0.1f64..10.0, a in 0.2f64..3.0, b in -3.0f64..3.0) {
        let (p1, p2) = spread_to_holdings(t1, w, a, b).unwrap();
        let (r1, r2) = spread_to_holdings(t2, w, a, b).unwrap();
        let (s1, s2) = spread_to_holdings(t1 + t2, w, a, b).unwrap();
        prop_assert!((s1 - p1 - r1).abs() < 1e-9 * (1.0 + s1.abs()));
        prop_assert!((s2 - p2 - r2).abs() < 1e-9 * (1.0 + s2.abs()));
        // b q1 + a q2 = 0: the position carries spread exposure only.
        prop_assert!((b * p1 + a * p2).abs() < 1e-9 * (1.0 + p1.abs()));
    }

    #[test]
    fn boxplot_is_ordered(v in prop::collection::vec(-100.0f64..100.0, 1..200)) {
        let s = boxplot_stats(&v).unwrap();
        prop_assert!(s.whisker_low <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.whisker_high);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= s.whisker_low && s.whisker_high <= hi);
    }
}
