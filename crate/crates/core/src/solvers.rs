//! One-step update rules and the run loop.
//!
//! The two prediction-correction schemes first move the iterate to anticipate
//! how the cost will change over the next sampling interval, then take a
//! gradient step on the cost frozen at the new sample time:
//!
//! * `alg1` predicts with the analytic time derivative `∇ₜf`,
//! * `alg2` replaces it by the backward difference `f(x_k, t_k) - f(x_k, t_{k-1})`.
//!
//! Prediction only fires while `‖∇ₓf(x_k, t_k)‖ ≥ ε`. Gradient descent and
//! the accelerated baselines perform exactly one update per sample time.

use crate::error::{Error, Result};
use crate::model::{
    Algorithm, CountingCost, ProblemConstants, SolverConfig, SolverState, TimeVaryingCost,
    TrajectoryRecord, Vector,
};
use crate::oracle::{gap_metrics, OptimumOracle};

/// Cost values above this mark a run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Point the correction gradient is taken from: the prediction for
    /// `alg1`/`alg2`, the current iterate for gd, the extrapolated point
    /// for the Nesterov baselines.
    pub x_pred: Vector,
    pub x_new: Vector,
    pub prediction_active: bool,
    /// `f(x_pred, t_{k+1})`.
    pub f_pred: f64,
}

fn checked_grad<C: TimeVaryingCost + ?Sized>(cost: &C, x: &Vector, t: f64) -> Result<Vector> {
    let g = cost.grad_x(x, t);
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::NonFinite {
            what: "gradient",
            t,
        })
    }
}

fn checked_value<C: TimeVaryingCost + ?Sized>(cost: &C, x: &Vector, t: f64) -> Result<f64> {
    let f = cost.value(x, t);
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite { what: "value", t })
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// Plain gradient descent `x_{k+1} = x_k - α ∇ₓf(x_k, t_{k+1})`.
pub fn gd_step<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    x: &Vector,
    t_next: f64,
    alpha: f64,
) -> Result<StepOutcome> {
    require_positive("alpha", alpha)?;
    let g = checked_grad(cost, x, t_next)?;
    Ok(StepOutcome {
        x_pred: x.clone(),
        x_new: x - g * alpha,
        prediction_active: false,
        f_pred: cost.value(x, t_next),
    })
}

/// Prediction with the analytic time derivative:
/// `x⁻ = x - δ |∇ₜf| / ‖∇ₓf‖² · ∇ₓf` when `‖∇ₓf‖ ≥ ε`, otherwise `x⁻ = x`.
pub fn alg1_predict<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    x: &Vector,
    t: f64,
    delta: f64,
    epsilon: f64,
) -> Result<(Vector, bool)> {
    require_positive("delta", delta)?;
    require_positive("epsilon", epsilon)?;
    let dt = cost.grad_t(x, t).ok_or(Error::MissingTimeDerivative)?;
    if !dt.is_finite() {
        return Err(Error::NonFinite {
            what: "time derivative",
            t,
        });
    }
    let g = checked_grad(cost, x, t)?;
    let norm = g.norm();
    if norm >= epsilon {
        let scale = delta * dt.abs() / (norm * norm);
        Ok((x - g * scale, true))
    } else {
        Ok((x.clone(), false))
    }
}

/// Prediction with a backward difference of cost values:
/// `x⁻ = x - |f_now - f_prev| / ‖∇ₓf‖² · ∇ₓf` when `‖∇ₓf(x, t)‖ ≥ ε`.
///
/// `f_now = f(x, t)` and `f_prev = f(x, t_prev)`; the difference already
/// carries the interval length, so no `δ` factor appears.
pub fn alg2_predict<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    x: &Vector,
    t: f64,
    t_prev: f64,
    f_now: f64,
    f_prev: f64,
    epsilon: f64,
) -> Result<(Vector, bool)> {
    require_positive("epsilon", epsilon)?;
    if !(t > t_prev) {
        return Err(Error::Domain(format!(
            "backward difference needs t > t_prev, got t = {t}, t_prev = {t_prev}"
        )));
    }
    if !(f_now.is_finite() && f_prev.is_finite()) {
        return Err(Error::NonFinite { what: "value", t });
    }
    let g = checked_grad(cost, x, t)?;
    let norm = g.norm();
    if norm >= epsilon {
        let scale = (f_now - f_prev).abs() / (norm * norm);
        Ok((x - g * scale, true))
    } else {
        Ok((x.clone(), false))
    }
}

/// Correction: one gradient step on the cost frozen at `t_next`.
pub fn correct<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    x_pred: &Vector,
    t_next: f64,
    alpha: f64,
) -> Result<Vector> {
    require_positive("alpha", alpha)?;
    let g = checked_grad(cost, x_pred, t_next)?;
    Ok(x_pred - g * alpha)
}

/// Momentum coefficient `(j - 1)/(j + 2)` of the accelerated method without
/// strong-convexity knowledge, clamped at zero for the first iteration.
pub fn nesterov_v1_coefficient(iteration: usize) -> f64 {
    let j = iteration as f64;
    ((j - 1.0) / (j + 2.0)).max(0.0)
}

/// Constant momentum `(√M - √m)/(√M + √m)` of the strongly convex variant.
pub fn nesterov_v2_coefficient(constants: &ProblemConstants) -> f64 {
    let (sm, sbig) = (constants.m.sqrt(), constants.big_m.sqrt());
    (sbig - sm) / (sbig + sm)
}

fn momentum_step<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    state: &mut SolverState,
    t_next: f64,
    alpha: f64,
    beta: f64,
) -> Result<StepOutcome> {
    require_positive("alpha", alpha)?;
    let x = &state.x;
    let prev = state.momentum.as_ref().unwrap_or(x);
    let y = x + (x - prev) * beta;
    let g = checked_grad(cost, &y, t_next)?;
    let x_new = &y - g * alpha;
    let f_pred = cost.value(&y, t_next);
    state.momentum = Some(state.x.clone());
    state.momentum_iter += 1;
    Ok(StepOutcome {
        x_pred: y,
        x_new,
        prediction_active: false,
        f_pred,
    })
}

/// Accelerated gradient step, momentum `(j-1)/(j+2)`. Updates the momentum
/// bookkeeping in `state`; the caller commits `x_new`.
pub fn nesterov_v1_step<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    state: &mut SolverState,
    t_next: f64,
    alpha: f64,
) -> Result<StepOutcome> {
    let beta = nesterov_v1_coefficient(state.momentum_iter);
    momentum_step(cost, state, t_next, alpha, beta)
}

/// Accelerated gradient step with the constant strongly convex momentum.
pub fn nesterov_v2_step<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    state: &mut SolverState,
    t_next: f64,
    alpha: f64,
    constants: Option<&ProblemConstants>,
) -> Result<StepOutcome> {
    let constants = constants.ok_or(Error::MissingConstants("nesterov-v2"))?;
    let beta = nesterov_v2_coefficient(constants);
    momentum_step(cost, state, t_next, alpha, beta)
}

/// Fletcher–Reeves conjugate gradient with an exact line search on the
/// quadratic model given by the Hessian at `t_next`.
pub fn nlcg_step<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    state: &mut SolverState,
    t_next: f64,
) -> Result<StepOutcome> {
    let x = state.x.clone();
    let g = checked_grad(cost, &x, t_next)?;
    let f_pred = cost.value(&x, t_next);
    let gg = g.dot(&g);
    if gg == 0.0 {
        state.cg_dir = None;
        state.cg_grad = None;
        return Ok(StepOutcome {
            x_pred: x.clone(),
            x_new: x,
            prediction_active: false,
            f_pred,
        });
    }
    let hess = cost
        .hessian(&x, t_next)
        .ok_or(Error::MissingHessian("nlcg"))?;

    let mut dir = match (&state.cg_dir, &state.cg_grad) {
        (Some(d), Some(gp)) if gp.dot(gp) > 0.0 => -&g + d * (gg / gp.dot(gp)),
        _ => -&g,
    };
    let mut curvature = dir.dot(&(&hess * &dir));
    if !(curvature.is_finite() && curvature > 0.0) {
        dir = -&g;
        curvature = dir.dot(&(&hess * &dir));
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(Error::Domain(format!(
                "non-positive curvature {curvature} along the steepest descent direction at t = {t_next}"
            )));
        }
    }
    // Exact minimizer along the line; equals gᵀg/dᵀHd whenever gᵀd = -gᵀg.
    let step = -g.dot(&dir) / curvature;
    let x_new = &x + &dir * step;
    state.cg_dir = Some(dir);
    state.cg_grad = Some(g);
    Ok(StepOutcome {
        x_pred: x,
        x_new,
        prediction_active: false,
        f_pred,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub outcome: StepOutcome,
    pub grad_evals: usize,
}

/// Drives one algorithm over successive sample times, one step per call.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: SolverConfig,
    constants: Option<ProblemConstants>,
    state: SolverState,
}

impl Tracker {
    pub fn new(
        config: SolverConfig,
        x0: Vector,
        constants: Option<ProblemConstants>,
    ) -> Result<Self> {
        config.validate()?;
        if config.algorithm == Algorithm::NesterovV2 && constants.is_none() {
            return Err(Error::MissingConstants("nesterov-v2"));
        }
        let state = SolverState::new(x0, config.t0, config.delta);
        Ok(Self {
            config,
            constants,
            state,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    /// Advances from `t_k` to `t_{k+1}`.
    pub fn step<C: TimeVaryingCost + ?Sized>(&mut self, cost: &C) -> Result<StepReport> {
        let cost = CountingCost::new(cost);
        let cfg = &self.config;
        let k = self.state.k;
        let t = self.state.time(k);
        let t_next = self.state.time(k + 1);
        let x = self.state.x.clone();

        if !cfg.algorithm.is_prediction_correction() && cost.jumps_between(t, t_next) {
            self.state.restart();
        }

        let outcome = match cfg.algorithm {
            Algorithm::GradientDescent => gd_step(&cost, &x, t_next, cfg.alpha)?,
            Algorithm::Alg1 => {
                let (x_pred, active) = alg1_predict(&cost, &x, t, cfg.delta, cfg.epsilon)?;
                self.finish_prediction(&cost, x_pred, active, t_next)?
            }
            Algorithm::Alg2 => {
                let (x_pred, active) = match self.state.f_prev {
                    // No earlier sample at k = 0: plain gradient step.
                    None => (x.clone(), false),
                    Some(f_prev) => {
                        let f_now = checked_value(&cost, &x, t)?;
                        let t_prev = self.state.time(k - 1);
                        alg2_predict(&cost, &x, t, t_prev, f_now, f_prev, cfg.epsilon)?
                    }
                };
                self.finish_prediction(&cost, x_pred, active, t_next)?
            }
            Algorithm::NesterovV1 => nesterov_v1_step(&cost, &mut self.state, t_next, cfg.alpha)?,
            Algorithm::NesterovV2 => nesterov_v2_step(
                &cost,
                &mut self.state,
                t_next,
                cfg.alpha,
                self.constants.as_ref(),
            )?,
            Algorithm::NonlinearCg => nlcg_step(&cost, &mut self.state, t_next)?,
        };

        if cfg.algorithm == Algorithm::Alg2 {
            // f(x_{k+1}, t_k) for the next backward difference.
            self.state.f_prev = Some(cost.value(&outcome.x_new, t));
        }
        self.state.x_pred = outcome.x_pred.clone();
        self.state.x = outcome.x_new.clone();
        self.state.k = k + 1;
        Ok(StepReport {
            outcome,
            grad_evals: cost.grad_evals(),
        })
    }

    fn finish_prediction<C: TimeVaryingCost + ?Sized>(
        &self,
        cost: &C,
        x_pred: Vector,
        active: bool,
        t_next: f64,
    ) -> Result<StepOutcome> {
        let f_pred = cost.value(&x_pred, t_next);
        let x_new = correct(cost, &x_pred, t_next, self.config.alpha)?;
        Ok(StepOutcome {
            x_pred,
            x_new,
            prediction_active: active,
            f_pred,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub constants: Option<ProblemConstants>,
    /// Gap levels for the steps-to-threshold summary.
    pub thresholds: Vec<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            constants: None,
            thresholds: vec![1e-1, 1e-2, 1e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub initial_gap: Option<f64>,
    pub final_gap: Option<f64>,
    pub min_gap: Option<f64>,
    /// First step index whose gap is at or below each threshold.
    pub steps_to_threshold: Vec<(f64, Option<usize>)>,
    pub diverged: bool,
    pub last_k: usize,
    pub grad_evals: usize,
}

/// Evaluates the iterate at its own sample time and fills the oracle columns.
pub fn record_point<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    oracle: Option<&mut (dyn OptimumOracle + '_)>,
    k: usize,
    t: f64,
    x: &Vector,
    pred_active: bool,
    grad_evals: usize,
) -> Result<TrajectoryRecord> {
    let f_val = cost.value(x, t);
    let grad_norm = cost.grad_x(x, t).norm();
    let (f_star, gap, x_err) = match oracle {
        Some(oracle) => {
            let opt = oracle.optimum(t)?;
            let (gap, x_err) = gap_metrics(cost, x, t, &opt);
            (Some(opt.f), Some(gap), Some(x_err))
        }
        None => (None, None, None),
    };
    Ok(TrajectoryRecord {
        k,
        t,
        x: x.clone(),
        f_val,
        grad_norm,
        f_star,
        gap,
        x_err,
        pred_active,
        grad_evals,
    })
}

/// Runs `config.steps` steps from `x0`, sending one record per completed step
/// (`k = 1..=steps`) to `sink`. The initial point only enters the summary.
pub fn run<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    config: &SolverConfig,
    x0: Vector,
    options: &RunOptions,
    mut oracle: Option<&mut (dyn OptimumOracle + '_)>,
    sink: &mut dyn FnMut(&TrajectoryRecord),
) -> Result<RunSummary> {
    if x0.len() != cost.dimension() {
        return Err(Error::Input(format!(
            "initial point has dimension {}, cost expects {}",
            x0.len(),
            cost.dimension()
        )));
    }
    if config.algorithm == Algorithm::Alg1 && cost.grad_t(&x0, config.t0).is_none() {
        return Err(Error::MissingTimeDerivative);
    }
    let mut tracker = Tracker::new(config.clone(), x0.clone(), options.constants)?;

    let initial = record_point(cost, oracle.as_deref_mut(), 0, config.t0, &x0, false, 0)?;
    let mut summary = RunSummary {
        algorithm: config.algorithm,
        steps: config.steps,
        initial_gap: initial.gap,
        final_gap: initial.gap,
        min_gap: initial.gap,
        steps_to_threshold: options.thresholds.iter().map(|&th| (th, None)).collect(),
        diverged: !(initial.f_val.is_finite() && initial.f_val <= DIVERGENCE_LIMIT),
        last_k: 0,
        grad_evals: 0,
    };
    update_thresholds(&mut summary, &initial);
    if summary.diverged {
        return Ok(summary);
    }

    for _ in 0..config.steps {
        let report = tracker.step(cost)?;
        let state = tracker.state();
        let record = record_point(
            cost,
            oracle.as_deref_mut(),
            state.k,
            state.t(),
            &state.x,
            report.outcome.prediction_active,
            report.grad_evals,
        )?;
        summary.grad_evals += report.grad_evals;
        summary.last_k = record.k;
        summary.final_gap = record.gap;
        if let (Some(g), Some(best)) = (record.gap, summary.min_gap) {
            summary.min_gap = Some(best.min(g));
        }
        update_thresholds(&mut summary, &record);
        sink(&record);
        if !(record.f_val.is_finite() && record.f_val <= DIVERGENCE_LIMIT) {
            summary.diverged = true;
            break;
        }
    }
    Ok(summary)
}

fn update_thresholds(summary: &mut RunSummary, record: &TrajectoryRecord) {
    if let Some(gap) = record.gap {
        for (th, hit) in summary.steps_to_threshold.iter_mut() {
            if hit.is_none() && gap <= *th {
                *hit = Some(record.k);
            }
        }
    }
}
