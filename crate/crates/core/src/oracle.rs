//! Ground truth for tracking errors.
//!
//! This is the only place (besides the exact-line-search baseline) that
//! touches second derivatives; the trackers under test stay first-order.

use crate::error::{Error, Result};
use crate::model::{Matrix, TimeVaryingCost, Vector};

/// Minimizer of the cost frozen at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vector,
    pub f: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Source of frozen-time optima for the run loop.
pub trait OptimumOracle {
    fn optimum(&mut self, t: f64) -> Result<Optimum>;
}

impl<F> OptimumOracle for F
where
    F: FnMut(f64) -> Result<Optimum>,
{
    fn optimum(&mut self, t: f64) -> Result<Optimum> {
        self(t)
    }
}

/// Maximum number of step halvings in the damped Newton line search.
const MAX_HALVINGS: usize = 30;

fn newton_direction(hess: Matrix, g: &Vector) -> Option<Vector> {
    let rhs = -g;
    if let Some(chol) = hess.clone().cholesky() {
        return Some(chol.solve(&rhs));
    }
    hess.lu().solve(&rhs)
}

/// Damped Newton iterations until `‖∇ₓf(x, t)‖ ≤ tol`.
///
/// Exact after one iteration for costs quadratic in `x`. The step is halved
/// while the cost increases, at most 30 times.
pub fn frozen_optimum<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    t: f64,
    x_init: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Optimum> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut x = x_init.clone();
    let mut g = cost.grad_x(&x, t);
    for iterations in 0..=max_iter {
        let residual = g.norm();
        if !residual.is_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                t,
            });
        }
        if residual <= tol {
            return Ok(Optimum {
                f: cost.value(&x, t),
                x,
                iterations,
                residual,
            });
        }
        if iterations == max_iter {
            return Err(Error::NotConverged {
                iterations,
                residual,
                last: x,
            });
        }
        let hess = cost
            .hessian(&x, t)
            .ok_or(Error::MissingHessian("the Newton oracle"))?;
        let dir = newton_direction(hess, &g)
            .ok_or_else(|| Error::Domain(format!("singular Hessian at t = {t}")))?;

        let f0 = cost.value(&x, t);
        let slack = 1e-12 * (1.0 + f0.abs());
        let mut step = 1.0;
        let mut trial = &x + &dir;
        for _ in 0..MAX_HALVINGS {
            let f = cost.value(&trial, t);
            if f.is_finite() && f <= f0 + slack {
                break;
            }
            step *= 0.5;
            trial = &x + &dir * step;
        }
        x = trial;
        g = cost.grad_x(&x, t);
    }
    unreachable!("loop returns on its last iteration")
}

/// Newton oracle warm-started from the previous optimum it returned.
pub struct NewtonOracle<'a, C: ?Sized> {
    cost: &'a C,
    pub tol: f64,
    pub max_iter: usize,
    warm: Vector,
}

impl<'a, C: TimeVaryingCost + ?Sized> NewtonOracle<'a, C> {
    pub fn new(cost: &'a C, x_init: Vector) -> Self {
        Self {
            cost,
            tol: 1e-10,
            max_iter: 50,
            warm: x_init,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

impl<C: TimeVaryingCost + ?Sized> OptimumOracle for NewtonOracle<'_, C> {
    fn optimum(&mut self, t: f64) -> Result<Optimum> {
        let opt = frozen_optimum(self.cost, t, &self.warm, self.tol, self.max_iter)?;
        self.warm = opt.x.clone();
        Ok(opt)
    }
}

/// `(f(x, t) - f*(t), ‖x - x*(t)‖)`.
pub fn gap_metrics<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    x: &Vector,
    t: f64,
    optimum: &Optimum,
) -> (f64, f64) {
    (cost.value(x, t) - optimum.f, (x - &optimum.x).norm())
}

/// Residual the Euler integration must keep at every sample.
pub const ODE_RESIDUAL_LIMIT: f64 = 1e-3;

/// `∇ₓₜf` by a central difference of the spatial gradient in time, one-sided
/// when the central stencil would straddle a jump.
pub fn mixed_derivative<C: TimeVaryingCost + ?Sized>(cost: &C, x: &Vector, t: f64) -> Vector {
    let h = 1e-6 * (1.0 + t.abs());
    if !cost.jumps_between(t - h, t + h) {
        (cost.grad_x(x, t + h) - cost.grad_x(x, t - h)) / (2.0 * h)
    } else if !cost.jumps_between(t, t + h) {
        (cost.grad_x(x, t + h) - cost.grad_x(x, t)) / h
    } else {
        (cost.grad_x(x, t) - cost.grad_x(x, t - h)) / h
    }
}

/// Forward-Euler integration of `ẋ* = -∇ₓₓf⁻¹ ∇ₓₜf` from an optimal
/// `x_star_0` at `t0`, sampled every `delta` up to `t1` with `substeps` Euler
/// steps per sample. Every returned sample is re-checked for optimality.
pub fn ode_trajectory<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    x_star_0: &Vector,
    t0: f64,
    t1: f64,
    delta: f64,
    substeps: usize,
) -> Result<Vec<(f64, Vector)>> {
    if !(delta > 0.0) || substeps == 0 || !(t1 >= t0) {
        return Err(Error::Domain(
            "need delta > 0, substeps >= 1 and t1 >= t0".into(),
        ));
    }
    let start_residual = cost.grad_x(x_star_0, t0).norm();
    if start_residual > 1e-8 {
        return Err(Error::Domain(format!(
            "starting point is not optimal at t0 = {t0} (residual {start_residual:e})"
        )));
    }
    let intervals = ((t1 - t0) / delta).round() as usize;
    let h = delta / substeps as f64;
    let mut x = x_star_0.clone();
    let mut samples = Vec::with_capacity(intervals + 1);
    samples.push((t0, x.clone()));
    for j in 0..intervals {
        let tj = t0 + j as f64 * delta;
        for s in 0..substeps {
            let tau = tj + s as f64 * h;
            let hess = cost
                .hessian(&x, tau)
                .ok_or(Error::MissingHessian("optimal-trajectory integration"))?;
            let dxt = mixed_derivative(cost, &x, tau);
            let vel = newton_direction(hess, &dxt)
                .ok_or_else(|| Error::Domain(format!("singular Hessian at t = {tau}")))?;
            x += vel * h;
        }
        let t_next = t0 + (j + 1) as f64 * delta;
        let residual = cost.grad_x(&x, t_next).norm();
        if !(residual <= ODE_RESIDUAL_LIMIT) {
            return Err(Error::OdeResidual {
                t: t_next,
                residual,
            });
        }
        samples.push((t_next, x.clone()));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Drift;

    impl TimeVaryingCost for Drift {
        fn dimension(&self) -> usize {
            1
        }
        fn value(&self, x: &Vector, t: f64) -> f64 {
            (x[0] - t).powi(2)
        }
        fn grad_x(&self, x: &Vector, t: f64) -> Vector {
            Vector::from_element(1, 2.0 * (x[0] - t))
        }
        fn hessian(&self, _x: &Vector, _t: f64) -> Option<Matrix> {
            Some(Matrix::from_element(1, 1, 2.0))
        }
    }

    /// Smooth non-quadratic: `Σ cosh(x_i - sin t)`, optimum `x_i = sin t`.
    struct CoshValley;

    impl TimeVaryingCost for CoshValley {
        fn dimension(&self) -> usize {
            2
        }
        fn value(&self, x: &Vector, t: f64) -> f64 {
            x.iter().map(|xi| (xi - t.sin()).cosh()).sum()
        }
        fn grad_x(&self, x: &Vector, t: f64) -> Vector {
            x.map(|xi| (xi - t.sin()).sinh())
        }
        fn hessian(&self, x: &Vector, t: f64) -> Option<Matrix> {
            Some(Matrix::from_diagonal(&x.map(|xi| (xi - t.sin()).cosh())))
        }
    }

    #[test]
    fn quadratic_optimum_in_one_newton_step() {
        let opt = frozen_optimum(&Drift, 0.1, &Vector::from_element(1, 5.0), 1e-12, 10).unwrap();
        assert_eq!(opt.iterations, 1);
        assert!((opt.x[0] - 0.1).abs() < 1e-15);
        assert!(opt.f.abs() < 1e-28);
    }

    #[test]
    fn damped_newton_on_non_quadratic() {
        let x0 = Vector::from_vec(vec![4.0, -3.0]);
        let opt = frozen_optimum(&CoshValley, 1.0, &x0, 1e-12, 100).unwrap();
        assert!(opt.residual <= 1e-12);
        assert!((opt.x[0] - 1f64.sin()).abs() < 1e-10);
        assert!((opt.f - 2.0).abs() < 1e-12);
    }

    #[test]
    fn iteration_limit_reports_last_iterate() {
        let x0 = Vector::from_vec(vec![40.0, -30.0]);
        match frozen_optimum(&CoshValley, 0.0, &x0, 1e-12, 2) {
            Err(Error::NotConverged {
                iterations, last, ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last.len(), 2);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn gap_metrics_hand_values() {
        let opt = frozen_optimum(&Drift, 0.1, &Vector::zeros(1), 1e-12, 5).unwrap();
        let (gap, err) = gap_metrics(&Drift, &Vector::from_element(1, 0.5), 0.1, &opt);
        assert!((gap - 0.16).abs() < 1e-15);
        assert!((err - 0.4).abs() < 1e-15);
        let (gap, err) = gap_metrics(&Drift, &opt.x, 0.1, &opt);
        assert_eq!((gap, err), (0.0, 0.0));
    }

    #[test]
    fn euler_trajectory_of_drift_is_identity() {
        let traj = ode_trajectory(&Drift, &Vector::zeros(1), 0.0, 2.0, 0.1, 4).unwrap();
        assert_eq!(traj.len(), 21);
        for (t, x) in &traj {
            assert!((x[0] - t).abs() < 1e-8, "x({t}) = {}", x[0]);
        }
    }

    #[test]
    fn euler_trajectory_follows_newton_samples() {
        let traj = ode_trajectory(&CoshValley, &Vector::zeros(2), 0.0, 3.0, 0.1, 200).unwrap();
        for (t, x) in traj {
            let opt = frozen_optimum(&CoshValley, t, &x, 1e-12, 50).unwrap();
            assert!((x - opt.x).norm() < 1e-3);
        }
    }

    #[test]
    fn non_optimal_start_rejected() {
        assert!(ode_trajectory(&Drift, &Vector::from_element(1, 1.0), 0.0, 1.0, 0.1, 4).is_err());
    }

    #[test]
    fn warm_started_oracle_reuses_previous_optimum() {
        let mut oracle = NewtonOracle::new(&CoshValley, Vector::zeros(2));
        let a = oracle.optimum(0.5).unwrap();
        let b = oracle.optimum(0.5).unwrap();
        assert!(a.iterations > 0);
        assert_eq!(b.iterations, 0);
    }
}
