use proptest::prelude::*;

use tvopt::bounds::{gamma, gamma_prime, optimal_epsilon, psi, BoundReport, BoundVariant};
use tvopt::model::{Algorithm, ProblemConstants, SolverConfig, TimeVaryingCost, Vector};
use tvopt::oracle::{frozen_optimum, ode_trajectory};
use tvopt::problems::mpc::HorizonQP;
use tvopt::problems::streaming_ls::{SlidingWindow, StreamingLs, StreamingLsConfig};
use tvopt::problems::synthetic::{synthetic_cost, QuadraticDrift};
use tvopt::solvers::Tracker;

fn constants() -> impl Strategy<Value = ProblemConstants> {
    (
        0.01f64..10.0,
        1.0f64..5.0,
        0.0f64..10.0,
        0.0f64..10.0,
        0.0f64..10.0,
    )
        .prop_map(|(m, r, k1, k2, k3)| ProblemConstants::new(m, m * r, k1, k2, k3).unwrap())
}

proptest! {
    #[test]
    fn gamma_prime_dominates_gamma(c in constants(), delta in 1e-3f64..1.0, eps in 1e-3f64..10.0) {
        let g = gamma(&c, delta, eps).unwrap();
        let gp = gamma_prime(&c, delta, eps).unwrap();
        prop_assert!(gp >= g * (1.0 - 1e-15));
    }

    #[test]
    fn psi_nonnegative_and_grows_with_delta(c in constants(), d in 0.0f64..1.0, extra in 1e-6f64..1.0) {
        let a = psi(&c, d).unwrap();
        let b = psi(&c, d + extra).unwrap();
        prop_assert!(a >= 0.0 && b >= a);
    }

    #[test]
    fn bound_is_monotone_towards_its_limit(
        c in constants(),
        frac in 1e-3f64..=1.0,
        delta in 1e-3f64..1.0,
        eps in 1e-3f64..10.0,
        gap0 in 0.0f64..1e4,
    ) {
        let alpha = frac * c.max_bound_step();
        let r = BoundReport::new(&c, alpha, delta, eps).unwrap();
        prop_assert!(r.contraction > 0.0 && r.contraction <= 1.0);
        for variant in [BoundVariant::Alg1, BoundVariant::Alg2] {
            let limit = r.ultimate(variant);
            let mut prev = r.per_step(0, gap0, variant).unwrap();
            prop_assert_eq!(prev, gap0);
            for k in [1u64, 2, 5, 10, 100, 1000, 100_000] {
                let b = r.per_step(k, gap0, variant).unwrap();
                prop_assert!(b >= 0.0);
                let tol = 1e-12 * (1.0 + b.abs());
                if gap0 >= limit {
                    prop_assert!(b <= prev + tol);
                } else {
                    prop_assert!(b >= prev - tol);
                }
                prev = b;
            }
        }
    }

    #[test]
    fn no_balancing_threshold_with_time_derivative(c in constants(), delta in 1e-3f64..1.0) {
        prop_assume!(c.k1 > 1e-6);
        let choice = optimal_epsilon(&c, delta, (1e-3, 10.0)).unwrap();
        prop_assert_eq!(choice.root, None);
        prop_assert_eq!(choice.fallback, 10.0);
    }

    #[test]
    fn drift_runs_stay_below_the_bound(
        x0 in -5.0f64..5.0,
        frac in 0.05f64..=1.0,
        eps in 0.01f64..1.0,
        alg2 in any::<bool>(),
    ) {
        let cost = QuadraticDrift::new(1).unwrap();
        let (alpha, delta) = (0.25 * frac, 0.1);
        let alg = if alg2 { Algorithm::Alg2 } else { Algorithm::Alg1 };
        let variant = if alg2 { BoundVariant::Alg2 } else { BoundVariant::Alg1 };
        let config = SolverConfig::new(alg, alpha, delta, eps, 200);
        let mut tracker = Tracker::new(config.clone(), Vector::from_element(1, x0), None).unwrap();
        let mut points = vec![(x0, 0.0)];
        let mut gaps = Vec::new();
        for k in 0..200 {
            let x = tracker.state().x[0];
            let out = tracker.step(&cost).unwrap().outcome;
            let tn = config.time(k + 1);
            points.extend([(x, tn), (out.x_pred[0], tn), (out.x_new[0], tn)]);
            gaps.push((out.x_new[0] - tn).powi(2));
        }
        let dev = points.iter().map(|(x, t)| (x - t).abs()).fold(0.0, f64::max);
        let c = cost.exact_constants(dev).unwrap();
        let r = BoundReport::new(&c, alpha, delta, eps).unwrap();
        for (k, gap) in gaps.iter().enumerate() {
            prop_assert!(*gap <= r.per_step(k as u64 + 1, x0 * x0, variant).unwrap() + 1e-9);
        }
    }

    #[test]
    fn idle_prediction_keeps_the_iterate(
        x in prop::array::uniform2(-3.0f64..3.0),
        eps in 1e-3f64..20.0,
        alg_index in 0usize..3,
    ) {
        let alg = [Algorithm::GradientDescent, Algorithm::Alg1, Algorithm::Alg2][alg_index];
        let cost = synthetic_cost();
        let config = SolverConfig::new(alg, 0.04, 0.1, eps, 30);
        let mut tracker = Tracker::new(config, Vector::from_row_slice(&x), None).unwrap();
        for _ in 0..30 {
            let before = tracker.state().x.clone();
            let out = tracker.step(&cost).unwrap().outcome;
            if !out.prediction_active {
                prop_assert_eq!(&out.x_pred, &before);
            }
        }
    }

    #[test]
    fn horizon_newton_matches_normal_equations(
        head in -100.0f64..100.0,
        reference in prop::collection::vec(-10.0f64..10.0, 10),
        hu in 1usize..=10,
        lambda in 0.01f64..10.0,
    ) {
        let qp = HorizonQP { head, reference, control_horizon: hu, lambda, delta: 0.1 };
        let opt = frozen_optimum(&qp, 0.0, &Vector::zeros(hu), 1e-10, 20).unwrap();
        let exact = qp.normal_equations_solution().unwrap();
        prop_assert!((opt.x - exact).amax() <= 1e-8);
    }

    #[test]
    fn incremental_window_tracks_recomputation(
        rows in prop::collection::vec((prop::array::uniform3(-5.0f64..5.0), -10.0f64..10.0), 1..200),
        cap in 1usize..20,
    ) {
        let mut w = SlidingWindow::new(3, cap).unwrap();
        for (a, b) in &rows {
            w.push(Vector::from_row_slice(a), *b).unwrap();
        }
        prop_assert_eq!(w.len(), rows.len().min(cap));
        let x = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        let scratch = w.value_from_scratch(&x);
        prop_assert!((w.value(&x) - scratch).abs() <= 1e-9 * (1.0 + scratch));
    }
}

fn assert_frozen_optima<C: TimeVaryingCost + ?Sized>(cost: &C, name: &str) {
    let (lo, hi) = cost.time_domain();
    let tol = 1e-10;
    for i in 0..100 {
        let t = lo + (hi - lo) * (i as f64 + 0.5) / 100.0;
        let opt = frozen_optimum(cost, t, &Vector::zeros(cost.dimension()), tol, 50)
            .unwrap_or_else(|e| panic!("{name} at t = {t}: {e}"));
        assert!(opt.residual <= tol, "{name} at t = {t}");
        assert!(cost.grad_x(&opt.x, t).norm() <= tol);
    }
}

#[test]
fn frozen_optima_are_stationary_for_all_problems() {
    assert_frozen_optima(&synthetic_cost(), "synthetic");
    assert_frozen_optima(&QuadraticDrift::new(3).unwrap(), "quadratic");
    let ls = StreamingLs::generate(&StreamingLsConfig::default()).unwrap();
    assert_frozen_optima(&ls, "streaming-ls");
}

#[test]
fn ode_agrees_with_newton_on_smooth_intervals() {
    let cost = synthetic_cost();
    for (t0, t1) in [(0.0, 44.9), (45.0, 60.0)] {
        let start = frozen_optimum(&cost, t0, &Vector::zeros(2), 1e-12, 20).unwrap();
        let traj = ode_trajectory(&cost, &start.x, t0, t1, 0.1, 1000).unwrap();
        for (t, x) in traj {
            let opt = frozen_optimum(&cost, t, &x, 1e-12, 20).unwrap();
            assert!((x - opt.x).norm() <= 1e-3, "t = {t}");
        }
    }
    let quad = QuadraticDrift::new(2).unwrap();
    let start = Vector::from_element(2, 1.0);
    for (t, x) in ode_trajectory(&quad, &start, 1.0, 20.0, 0.1, 2).unwrap() {
        assert!((x - Vector::from_element(2, t)).norm() <= 1e-3);
    }
}

#[test]
fn ode_refuses_to_cross_the_jump() {
    let cost = synthetic_cost();
    let start = frozen_optimum(&cost, 44.0, &Vector::zeros(2), 1e-12, 20).unwrap();
    assert!(ode_trajectory(&cost, &start.x, 44.0, 46.0, 0.1, 50).is_err());
}
