//! Domain types shared by solvers, oracles and problems: the time-varying
//! cost interface, regularity constants, solver configuration and the
//! per-step trajectory log.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// A cost `f(x, t)` that is strongly convex in `x` for every fixed `t`.
///
/// Implementations are pure: evaluating never mutates shared state, so a
/// cost can be shared read-only between concurrent runs.
pub trait TimeVaryingCost: Send + Sync {
    fn dimension(&self) -> usize;

    fn value(&self, x: &Vector, t: f64) -> f64;

    /// Spatial gradient `∇ₓf(x, t)`.
    fn grad_x(&self, x: &Vector, t: f64) -> Vector;

    /// Partial derivative in time. `None` when the cost is only known through
    /// samples (streamed data, receding-horizon problems).
    fn grad_t(&self, _x: &Vector, _t: f64) -> Option<f64> {
        None
    }

    /// Only used by the ground-truth oracle and exact-line-search baselines.
    fn hessian(&self, _x: &Vector, _t: f64) -> Option<Matrix> {
        None
    }

    /// Whether the cost changes abruptly somewhere in `(t_prev, t_next]`.
    fn jumps_between(&self, _t_prev: f64, _t_next: f64) -> bool {
        false
    }

    /// Time interval on which the cost is defined; used to draw validation samples.
    fn time_domain(&self) -> (f64, f64) {
        (0.0, 100.0)
    }
}

impl<C: TimeVaryingCost + ?Sized> TimeVaryingCost for &C {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn value(&self, x: &Vector, t: f64) -> f64 {
        (**self).value(x, t)
    }
    fn grad_x(&self, x: &Vector, t: f64) -> Vector {
        (**self).grad_x(x, t)
    }
    fn grad_t(&self, x: &Vector, t: f64) -> Option<f64> {
        (**self).grad_t(x, t)
    }
    fn hessian(&self, x: &Vector, t: f64) -> Option<Matrix> {
        (**self).hessian(x, t)
    }
    fn jumps_between(&self, t_prev: f64, t_next: f64) -> bool {
        (**self).jumps_between(t_prev, t_next)
    }
    fn time_domain(&self) -> (f64, f64) {
        (**self).time_domain()
    }
}

/// Wraps a cost and counts spatial-gradient evaluations.
pub struct CountingCost<'a, C: ?Sized> {
    inner: &'a C,
    grads: AtomicUsize,
}

impl<'a, C: TimeVaryingCost + ?Sized> CountingCost<'a, C> {
    pub fn new(inner: &'a C) -> Self {
        Self {
            inner,
            grads: AtomicUsize::new(0),
        }
    }

    pub fn grad_evals(&self) -> usize {
        self.grads.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.grads.store(0, Ordering::Relaxed);
    }
}

impl<C: TimeVaryingCost + ?Sized> TimeVaryingCost for CountingCost<'_, C> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn value(&self, x: &Vector, t: f64) -> f64 {
        self.inner.value(x, t)
    }
    fn grad_x(&self, x: &Vector, t: f64) -> Vector {
        self.grads.fetch_add(1, Ordering::Relaxed);
        self.inner.grad_x(x, t)
    }
    fn grad_t(&self, x: &Vector, t: f64) -> Option<f64> {
        self.inner.grad_t(x, t)
    }
    fn hessian(&self, x: &Vector, t: f64) -> Option<Matrix> {
        self.inner.hessian(x, t)
    }
    fn jumps_between(&self, t_prev: f64, t_next: f64) -> bool {
        self.inner.jumps_between(t_prev, t_next)
    }
    fn time_domain(&self) -> (f64, f64) {
        self.inner.time_domain()
    }
}

/// Regularity constants of a cost: `m I ⪯ ∇ₓₓf ⪯ M I`, `|∇ₜf| ≤ K1`,
/// `‖∇ₓₜf‖ ≤ K2`, `|∇ₜₜf| ≤ K3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub m: f64,
    pub big_m: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Set when the constants were estimated by sampling rather than derived.
    pub empirical: bool,
}

impl ProblemConstants {
    pub fn new(m: f64, big_m: f64, k1: f64, k2: f64, k3: f64) -> Result<Self> {
        let c = Self {
            m,
            big_m,
            k1,
            k2,
            k3,
            empirical: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.big_m, self.k1, self.k2, self.k3];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("problem constants must be finite".into()));
        }
        if self.m <= 0.0 {
            return Err(Error::Domain(format!("m must be positive, got {}", self.m)));
        }
        if self.big_m < self.m {
            return Err(Error::Domain(format!(
                "M = {} must be at least m = {}",
                self.big_m, self.m
            )));
        }
        if self.k1 < 0.0 || self.k2 < 0.0 || self.k3 < 0.0 {
            return Err(Error::Domain("K1, K2, K3 must be nonnegative".into()));
        }
        Ok(())
    }

    /// Largest step size covered by the tracking bounds.
    pub fn max_bound_step(&self) -> f64 {
        1.0 / (2.0 * self.big_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    GradientDescent,
    /// Prediction with the analytic time derivative.
    Alg1,
    /// Prediction with a backward difference of cost values.
    Alg2,
    NesterovV1,
    NesterovV2,
    NonlinearCg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::GradientDescent,
        Algorithm::Alg1,
        Algorithm::Alg2,
        Algorithm::NesterovV1,
        Algorithm::NesterovV2,
        Algorithm::NonlinearCg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GradientDescent => "gd",
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::NesterovV1 => "nesterov-v1",
            Algorithm::NesterovV2 => "nesterov-v2",
            Algorithm::NonlinearCg => "nlcg",
        }
    }

    pub fn is_prediction_correction(self) -> bool {
        matches!(self, Algorithm::Alg1 | Algorithm::Alg2)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" | "gradient-descent" => Ok(Algorithm::GradientDescent),
            "alg1" => Ok(Algorithm::Alg1),
            "alg2" => Ok(Algorithm::Alg2),
            "nesterov-v1" | "nesterov1" => Ok(Algorithm::NesterovV1),
            "nesterov-v2" | "nesterov2" => Ok(Algorithm::NesterovV2),
            "nlcg" | "cg" => Ok(Algorithm::NonlinearCg),
            other => Err(Error::Input(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    /// Sampling interval `t_{k+1} - t_k`.
    pub delta: f64,
    /// Gradient-norm threshold below which prediction is skipped.
    pub epsilon: f64,
    pub algorithm: Algorithm,
    pub steps: usize,
    pub t0: f64,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, alpha: f64, delta: f64, epsilon: f64, steps: usize) -> Self {
        Self {
            alpha,
            delta,
            epsilon,
            algorithm,
            steps,
            t0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t0.is_finite() && self.t0 >= 0.0) {
            return Err(Error::Domain(format!(
                "t0 must be nonnegative, got {}",
                self.t0
            )));
        }
        Ok(())
    }

    /// Checks the step-size condition `alpha <= 1/(2M)` under which the
    /// tracking bounds hold.
    pub fn validate_for_bounds(&self, constants: &ProblemConstants) -> Result<()> {
        self.validate()?;
        if self.alpha > constants.max_bound_step() {
            return Err(Error::Domain(format!(
                "alpha = {} exceeds 1/(2M) = {}",
                self.alpha,
                constants.max_bound_step()
            )));
        }
        Ok(())
    }

    /// Sample time of step `k`. Computed from the index so long runs do not
    /// accumulate rounding drift.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.delta
    }
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Vector,
    /// Last predicted iterate `x⁻`.
    pub x_pred: Vector,
    pub k: usize,
    pub t0: f64,
    pub delta: f64,
    /// `f(x_k, t_{k-1})`, cached for the backward-difference prediction.
    pub f_prev: Option<f64>,
    /// Previous iterate, for the momentum baselines.
    pub momentum: Option<Vector>,
    /// Momentum iteration counter since the last restart.
    pub momentum_iter: usize,
    pub cg_dir: Option<Vector>,
    pub cg_grad: Option<Vector>,
}

impl SolverState {
    pub fn new(x0: Vector, t0: f64, delta: f64) -> Self {
        Self {
            x_pred: x0.clone(),
            momentum: Some(x0.clone()),
            x: x0,
            k: 0,
            t0,
            delta,
            f_prev: None,
            momentum_iter: 0,
            cg_dir: None,
            cg_grad: None,
        }
    }

    pub fn t(&self) -> f64 {
        self.time(self.k)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.delta
    }

    /// Drops momentum and conjugate directions, e.g. after a jump in the cost.
    pub fn restart(&mut self) {
        self.momentum = Some(self.x.clone());
        self.momentum_iter = 0;
        self.cg_dir = None;
        self.cg_grad = None;
    }
}

/// One logged step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub t: f64,
    pub x: Vector,
    pub f_val: f64,
    pub grad_norm: f64,
    pub f_star: Option<f64>,
    /// `f(x_k, t_k) - f*(t_k)`.
    pub gap: Option<f64>,
    /// `‖x_k - x*(t_k)‖`.
    pub x_err: Option<f64>,
    pub pred_active: bool,
    /// Spatial gradients spent by the solver on the step that produced `x`.
    pub grad_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub max_rel_err_x: f64,
    pub max_rel_err_t: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
    /// First failing sample `(x, t)` with a reason.
    pub failure: Option<(Vector, f64, String)>,
}

pub const VALIDATION_TOL: f64 = 1e-5;

/// Error measure used by the finite-difference checks: absolute for small
/// magnitudes, relative for large ones.
fn scaled_err(fd: f64, exact: f64) -> f64 {
    (fd - exact).abs() / (1.0 + exact.abs())
}

/// Checks analytic derivatives against central finite differences at
/// `samples` points drawn deterministically from `seed`, with `x` uniform in
/// `[-2, 2]ⁿ` and `t` uniform over the cost's time domain.
pub fn validate_cost<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if samples == 0 {
        return Err(Error::Input("validation needs at least one sample".into()));
    }
    let n = cost.dimension();
    let (t_lo, t_hi) = cost.time_domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ValidationReport {
        samples,
        max_rel_err_x: 0.0,
        max_rel_err_t: None,
        tolerance: VALIDATION_TOL,
        passed: true,
        failure: None,
    };

    for _ in 0..samples {
        let x = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let t = if t_hi > t_lo {
            rng.random_range(t_lo..t_hi)
        } else {
            t_lo
        };

        let f = cost.value(&x, t);
        let g = cost.grad_x(&x, t);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            report.passed = false;
            report.failure = Some((x, t, "non-finite value or gradient".into()));
            break;
        }

        let h = 1e-6 * (1.0 + x.amax());
        let mut worst = 0.0_f64;
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (cost.value(&xp, t) - cost.value(&xm, t)) / (2.0 * h);
            worst = worst.max(scaled_err(fd, g[i]));
        }
        report.max_rel_err_x = report.max_rel_err_x.max(worst);
        if worst > VALIDATION_TOL && report.failure.is_none() {
            report.passed = false;
            report.failure = Some((x.clone(), t, format!("grad_x error {worst:e}")));
        }

        if let Some(gt) = cost.grad_t(&x, t) {
            if !gt.is_finite() {
                report.passed = false;
                report.failure = Some((x, t, "non-finite time derivative".into()));
                break;
            }
            let ht = 1e-6 * (1.0 + t.abs());
            let fd = (cost.value(&x, t + ht) - cost.value(&x, t - ht)) / (2.0 * ht);
            let err = scaled_err(fd, gt);
            let prev = report.max_rel_err_t.unwrap_or(0.0);
            report.max_rel_err_t = Some(prev.max(err));
            if err > VALIDATION_TOL && report.failure.is_none() {
                report.passed = false;
                report.failure = Some((x, t, format!("grad_t error {err:e}")));
            }
        }
    }
    Ok(report)
}
