use tvopt::model::{validate_cost, TimeVaryingCost};
use tvopt::problems::mpc::{mpc_horizon_cost, Axis, SinePath, UnicycleState};
use tvopt::problems::{synthetic_cost, QuadraticDrift, StreamingLs, StreamingLsConfig};

fn check<C: TimeVaryingCost + ?Sized>(cost: &C, name: &str) {
    let report = validate_cost(cost, 200, 7).unwrap();
    assert!(report.passed, "{name}: {:?}", report.failure);
}

#[test]
fn shipped_costs_have_consistent_derivatives() {
    check(&synthetic_cost(), "synthetic");
    check(&QuadraticDrift::new(4).unwrap(), "quadratic");
    let config = StreamingLsConfig {
        dimension: 5,
        window: 8,
        steps: 60,
        jump_indices: vec![20, 40],
        ..StreamingLsConfig::default()
    };
    check(&StreamingLs::generate(&config).unwrap(), "streaming-ls");
    let state = UnicycleState {
        x: -1.0,
        y: 0.5,
        theta: 0.3,
        b: 0.2,
    };
    for axis in [Axis::X, Axis::Y] {
        let qp =
            mpc_horizon_cost(&state, axis, &SinePath { delta: 0.1 }, 12, 10, 4, 0.1, 0.1).unwrap();
        check(&qp, "mpc horizon");
    }
}

#[test]
fn synthetic_time_derivative_is_reported() {
    let report = validate_cost(&synthetic_cost(), 50, 3).unwrap();
    assert!(report.max_rel_err_t.is_some());
}
