//! Receding-horizon tracking for a unicycle's head point.
//!
//! The head point `(x + b cos θ, y + b sin θ)` of a unicycle obeys single
//! integrator dynamics after an input transform, so each axis gets its own
//! unconstrained quadratic program over the next `H_u` controls:
//!
//! ```text
//! J(u) = Σ_{i<H_p} (r(k+i) - h(k+i))² + (1/λ) Σ_{i<H_u} u(i)²,
//! h(k+i) = h(k) + δ Σ_{j<i} u(j)
//! ```

use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::model::{
    Algorithm, Matrix, ProblemConstants, SolverConfig, TimeVaryingCost, TrajectoryRecord, Vector,
};
use crate::solvers::{Tracker, DIVERGENCE_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Samples of the path to follow, indexed by step.
pub trait ReferencePath: Send + Sync {
    /// `None` past the end of a finite path.
    fn sample(&self, k: usize) -> Option<(f64, f64)>;

    fn coordinate(&self, k: usize, axis: Axis) -> Option<f64> {
        self.sample(k).map(|(x, y)| match axis {
            Axis::X => x,
            Axis::Y => y,
        })
    }
}

/// `r_x = δk`, `r_y = sin(π/5 · r_x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinePath {
    pub delta: f64,
}

impl ReferencePath for SinePath {
    fn sample(&self, k: usize) -> Option<(f64, f64)> {
        Some(reference_path(k, self.delta))
    }
}

pub fn reference_path(k: usize, delta: f64) -> (f64, f64) {
    let rx = delta * k as f64;
    (rx, (std::f64::consts::PI / 5.0 * rx).sin())
}

/// Finite path given point by point.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPath {
    pub points: Vec<(f64, f64)>,
}

impl ReferencePath for TabulatedPath {
    fn sample(&self, k: usize) -> Option<(f64, f64)> {
        self.points.get(k).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    /// Distance from the wheel axle to the head point.
    pub b: f64,
}

impl UnicycleState {
    pub fn head(&self) -> (f64, f64) {
        (
            self.x + self.b * self.theta.cos(),
            self.y + self.b * self.theta.sin(),
        )
    }

    pub fn head_coordinate(&self, axis: Axis) -> f64 {
        let (hx, hy) = self.head();
        match axis {
            Axis::X => hx,
            Axis::Y => hy,
        }
    }

    /// Moves the head by `δ(u₁, u₂)`. The heading follows the head's motion
    /// and is kept when the head does not move.
    pub fn advance(&self, u1: f64, u2: f64, delta: f64) -> Self {
        let (dx, dy) = (delta * u1, delta * u2);
        if dx == 0.0 && dy == 0.0 {
            return *self;
        }
        let (hx, hy) = self.head();
        let (hx, hy) = (hx + dx, hy + dy);
        let theta = dy.atan2(dx);
        Self {
            x: hx - self.b * theta.cos(),
            y: hy - self.b * theta.sin(),
            theta,
            b: self.b,
        }
    }
}

/// One axis's horizon problem at a fixed step; independent of `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonQP {
    /// Current head coordinate `h(k)`.
    pub head: f64,
    /// `r(k), …, r(k + H_p - 1)`.
    pub reference: Vec<f64>,
    pub control_horizon: usize,
    pub lambda: f64,
    pub delta: f64,
}

impl HorizonQP {
    pub fn prediction_horizon(&self) -> usize {
        self.reference.len()
    }

    /// Tracking errors `r(k+i) - h(k+i)` under the controls `u`.
    fn errors(&self, u: &Vector) -> Vec<f64> {
        let mut h = self.head;
        let mut e = Vec::with_capacity(self.reference.len());
        for (i, r) in self.reference.iter().enumerate() {
            e.push(r - h);
            if i < self.control_horizon {
                h += self.delta * u[i];
            }
        }
        e
    }

    /// Maps controls to predicted head offsets: `G[i][j] = δ` for `j < i`.
    pub fn prediction_matrix(&self) -> Matrix {
        let delta = self.delta;
        Matrix::from_fn(self.prediction_horizon(), self.control_horizon, |i, j| {
            if j < i {
                delta
            } else {
                0.0
            }
        })
    }

    /// Minimizer from the normal equations `(GᵀG + I/λ) u = Gᵀ(r - h(k))`.
    pub fn normal_equations_solution(&self) -> Result<Vector> {
        let g = self.prediction_matrix();
        let lhs = g.transpose() * &g
            + Matrix::identity(self.control_horizon, self.control_horizon) / self.lambda;
        let rhs = g.transpose()
            * Vector::from_iterator(
                self.reference.len(),
                self.reference.iter().map(|r| r - self.head),
            );
        lhs.cholesky().map(|c| c.solve(&rhs)).ok_or_else(|| {
            Error::Domain("horizon normal equations are not positive definite".into())
        })
    }

    /// `2(GᵀG + I/λ)`.
    pub fn constant_hessian(&self) -> Matrix {
        let g = self.prediction_matrix();
        (g.transpose() * &g
            + Matrix::identity(self.control_horizon, self.control_horizon) / self.lambda)
            * 2.0
    }
}

impl TimeVaryingCost for HorizonQP {
    fn dimension(&self) -> usize {
        self.control_horizon
    }

    fn value(&self, u: &Vector, _t: f64) -> f64 {
        let tracking: f64 = self.errors(u).iter().map(|e| e * e).sum();
        tracking + u.norm_squared() / self.lambda
    }

    fn grad_x(&self, u: &Vector, _t: f64) -> Vector {
        let e = self.errors(u);
        let mut g = u * (2.0 / self.lambda);
        // Σ_{i>j} e_i, accumulated from the end of the horizon.
        let mut tail = 0.0;
        for j in (0..e.len()).rev() {
            if j < self.control_horizon {
                g[j] -= 2.0 * self.delta * tail;
            }
            tail += e[j];
        }
        g
    }

    fn hessian(&self, _u: &Vector, _t: f64) -> Option<Matrix> {
        Some(self.constant_hessian())
    }
}

fn check_horizon(hp: usize, hu: usize, lambda: f64, delta: f64) -> Result<()> {
    if hp == 0 || hu == 0 || hu > hp {
        return Err(Error::Input(format!(
            "horizons need 1 <= H_u <= H_p, got H_p = {hp}, H_u = {hu}"
        )));
    }
    if !(lambda > 0.0) || !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "lambda and delta must be positive, got {lambda} and {delta}"
        )));
    }
    Ok(())
}

fn reference_window(path: &dyn ReferencePath, axis: Axis, k: usize, hp: usize) -> Result<Vec<f64>> {
    (k..k + hp)
        .map(|i| {
            path.coordinate(i, axis).ok_or_else(|| {
                Error::Input(format!(
                    "reference path ends before step {} (needed for horizon at k = {k})",
                    i
                ))
            })
        })
        .collect()
}

/// Horizon problem for one axis at step `k`.
#[allow(clippy::too_many_arguments)]
pub fn mpc_horizon_cost(
    state: &UnicycleState,
    axis: Axis,
    path: &dyn ReferencePath,
    k: usize,
    hp: usize,
    hu: usize,
    lambda: f64,
    delta: f64,
) -> Result<HorizonQP> {
    check_horizon(hp, hu, lambda, delta)?;
    Ok(HorizonQP {
        head: state.head_coordinate(axis),
        reference: reference_window(path, axis, k, hp)?,
        control_horizon: hu,
        lambda,
        delta,
    })
}

/// The horizon problems of one axis as a single cost in `t = kδ`.
///
/// Head positions are appended as the closed loop advances; evaluating at a
/// step whose head position is not yet known gives NaN.
pub struct MpcAxisCost {
    pub axis: Axis,
    path: Arc<dyn ReferencePath>,
    hp: usize,
    hu: usize,
    lambda: f64,
    delta: f64,
    heads: RwLock<Vec<f64>>,
}

impl MpcAxisCost {
    pub fn new(
        axis: Axis,
        path: Arc<dyn ReferencePath>,
        hp: usize,
        hu: usize,
        lambda: f64,
        delta: f64,
        initial_head: f64,
    ) -> Result<Self> {
        check_horizon(hp, hu, lambda, delta)?;
        Ok(Self {
            axis,
            path,
            hp,
            hu,
            lambda,
            delta,
            heads: RwLock::new(vec![initial_head]),
        })
    }

    pub fn push_head(&self, head: f64) {
        self.heads.write().expect("head history lock").push(head);
    }

    pub fn known_steps(&self) -> usize {
        self.heads.read().expect("head history lock").len()
    }

    pub fn step_of(&self, t: f64) -> usize {
        (t / self.delta).round().max(0.0) as usize
    }

    /// Horizon problem at step `k`.
    pub fn qp_at(&self, k: usize) -> Result<HorizonQP> {
        let head = *self
            .heads
            .read()
            .expect("head history lock")
            .get(k)
            .ok_or_else(|| Error::Input(format!("head position at step {k} not yet known")))?;
        Ok(HorizonQP {
            head,
            reference: reference_window(self.path.as_ref(), self.axis, k, self.hp)?,
            control_horizon: self.hu,
            lambda: self.lambda,
            delta: self.delta,
        })
    }

    fn qp_at_time(&self, t: f64) -> Option<HorizonQP> {
        self.qp_at(self.step_of(t)).ok()
    }
}

impl TimeVaryingCost for MpcAxisCost {
    fn dimension(&self) -> usize {
        self.hu
    }

    fn value(&self, u: &Vector, t: f64) -> f64 {
        self.qp_at_time(t).map_or(f64::NAN, |qp| qp.value(u, t))
    }

    fn grad_x(&self, u: &Vector, t: f64) -> Vector {
        match self.qp_at_time(t) {
            Some(qp) => qp.grad_x(u, t),
            None => Vector::from_element(self.hu, f64::NAN),
        }
    }

    fn hessian(&self, u: &Vector, t: f64) -> Option<Matrix> {
        self.qp_at_time(t).and_then(|qp| qp.hessian(u, t))
    }

    fn time_domain(&self) -> (f64, f64) {
        let n = self.known_steps();
        (0.0, self.delta * n.saturating_sub(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub prediction_horizon: usize,
    pub control_horizon: usize,
    pub lambda: f64,
    pub delta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub start: UnicycleState,
    /// Every entry of the initial control sequence.
    pub initial_control: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            prediction_horizon: 10,
            control_horizon: 10,
            lambda: 0.1,
            delta: 0.1,
            alpha: 0.01,
            epsilon: 0.1,
            steps: 1000,
            start: UnicycleState {
                x: -100.0,
                y: -100.0,
                theta: 0.0,
                b: 0.2,
            },
            initial_control: 1.0,
        }
    }
}

/// Closed-loop outcome. Records describe both axes jointly: `x` stacks the
/// x- and y-axis controls, values and gaps are sums over the two axes.
#[derive(Debug, Clone)]
pub struct MpcRun {
    pub algorithm: Algorithm,
    /// One record per step, `k = 1..=steps` (fewer on divergence).
    pub records: Vec<TrajectoryRecord>,
    /// Per-axis control errors `‖u_k - u*_k‖`, aligned with `records`.
    pub axis_errors: Vec<[f64; 2]>,
    /// Summed `f(u⁻, t_{k+1})` at the points each correction started from.
    pub predicted_values: Vec<f64>,
    pub states: Vec<UnicycleState>,
    pub diverged: bool,
}

impl MpcRun {
    /// Joint control errors `‖u_k - u*_k‖`, aligned with `records`.
    pub fn control_errors(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.x_err.unwrap_or(f64::NAN))
            .collect()
    }
}

/// Curvature of the (step-independent) horizon Hessian. Time constants are
/// reported as zero since they are not known for this problem.
pub fn mpc_constants(config: &MpcConfig) -> Result<ProblemConstants> {
    check_horizon(
        config.prediction_horizon,
        config.control_horizon,
        config.lambda,
        config.delta,
    )?;
    let qp = HorizonQP {
        head: 0.0,
        reference: vec![0.0; config.prediction_horizon],
        control_horizon: config.control_horizon,
        lambda: config.lambda,
        delta: config.delta,
    };
    let eig = qp.constant_hessian().symmetric_eigenvalues();
    ProblemConstants::new(eig.min(), eig.max(), 0.0, 0.0, 0.0)
}

/// Runs the receding-horizon loop: at every step the first control of each
/// axis is applied, then each axis's tracker moves its control sequence to the
/// next horizon problem.
pub fn simulate(
    config: &MpcConfig,
    algorithm: Algorithm,
    path: Arc<dyn ReferencePath>,
) -> Result<MpcRun> {
    let constants = mpc_constants(config)?;
    let costs = [Axis::X, Axis::Y].map(|axis| {
        MpcAxisCost::new(
            axis,
            path.clone(),
            config.prediction_horizon,
            config.control_horizon,
            config.lambda,
            config.delta,
            config.start.head_coordinate(axis),
        )
    });
    let [cx, cy] = costs;
    let costs = [cx?, cy?];
    let solver = SolverConfig::new(
        algorithm,
        config.alpha,
        config.delta,
        config.epsilon,
        config.steps,
    );
    let u0 = Vector::from_element(config.control_horizon, config.initial_control);
    let mut trackers = [
        Tracker::new(solver.clone(), u0.clone(), Some(constants))?,
        Tracker::new(solver, u0, Some(constants))?,
    ];

    let mut state = config.start;
    let mut run = MpcRun {
        algorithm,
        records: Vec::with_capacity(config.steps),
        axis_errors: Vec::with_capacity(config.steps),
        predicted_values: Vec::with_capacity(config.steps),
        states: vec![state],
        diverged: false,
    };

    for k in 0..config.steps {
        let applied = [trackers[0].state().x[0], trackers[1].state().x[0]];
        state = state.advance(applied[0], applied[1], config.delta);
        run.states.push(state);
        for (cost, axis) in costs.iter().zip([Axis::X, Axis::Y]) {
            cost.push_head(state.head_coordinate(axis));
        }

        let t_next = config.delta * (k + 1) as f64;
        let mut record = TrajectoryRecord {
            k: k + 1,
            t: t_next,
            x: Vector::zeros(2 * config.control_horizon),
            f_val: 0.0,
            grad_norm: 0.0,
            f_star: Some(0.0),
            gap: Some(0.0),
            x_err: Some(0.0),
            pred_active: false,
            grad_evals: 0,
        };
        let mut errors = [0.0; 2];
        let mut grad_sq = 0.0;
        let mut predicted = 0.0;
        for (i, (tracker, cost)) in trackers.iter_mut().zip(costs.iter()).enumerate() {
            let report = tracker.step(cost)?;
            let u = &tracker.state().x;
            let qp = cost.qp_at(k + 1)?;
            let u_star = qp.normal_equations_solution()?;
            let f = qp.value(u, t_next);
            let f_star = qp.value(&u_star, t_next);
            errors[i] = (u - &u_star).norm();
            grad_sq += qp.grad_x(u, t_next).norm_squared();
            record
                .x
                .rows_mut(i * config.control_horizon, config.control_horizon)
                .copy_from(u);
            record.f_val += f;
            record.f_star = record.f_star.map(|s| s + f_star);
            predicted += report.outcome.f_pred;
            record.pred_active |= report.outcome.prediction_active;
            record.grad_evals += report.grad_evals;
        }
        record.grad_norm = grad_sq.sqrt();
        record.gap = Some(record.f_val - record.f_star.unwrap_or(0.0));
        record.x_err = Some((errors[0] * errors[0] + errors[1] * errors[1]).sqrt());
        let diverged = !(record.f_val.is_finite() && record.f_val <= DIVERGENCE_LIMIT);
        run.records.push(record);
        run.axis_errors.push(errors);
        run.predicted_values.push(predicted);
        if diverged {
            run.diverged = true;
            break;
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_cost;
    use crate::oracle::frozen_optimum;

    fn qp(head: f64, reference: Vec<f64>, hu: usize) -> HorizonQP {
        HorizonQP {
            head,
            reference,
            control_horizon: hu,
            lambda: 0.1,
            delta: 0.1,
        }
    }

    #[test]
    fn reference_samples() {
        assert_eq!(reference_path(0, 0.1), (0.0, 0.0));
        let (rx, ry) = reference_path(25, 0.1);
        assert!((rx - 2.5).abs() < 1e-15 && (ry - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unicycle_head_moves_by_control() {
        let s = UnicycleState {
            x: -0.2,
            y: 0.0,
            theta: 0.0,
            b: 0.2,
        };
        assert_eq!(s.advance(0.0, 0.0, 0.1), s);
        let (hx, hy) = s.advance(1.0, 0.0, 0.1).head();
        assert!((hx - 0.1).abs() < 1e-15 && hy.abs() < 1e-15);
        let d = MpcConfig::default().start;
        let (h0x, h0y) = d.head();
        let moved = d.advance(1.0, 1.0, 0.1);
        let (h1x, h1y) = moved.head();
        assert!((h1x - h0x - 0.1).abs() < 1e-12 && (h1y - h0y - 0.1).abs() < 1e-12);
        assert!((moved.theta - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn zero_problem_has_zero_minimizer() {
        let q = qp(0.0, vec![0.0; 10], 10);
        let u = q.normal_equations_solution().unwrap();
        assert_eq!(u.norm(), 0.0);
        assert_eq!(q.grad_x(&Vector::zeros(10), 0.0).norm(), 0.0);
    }

    #[test]
    fn scalar_horizon_matches_closed_form() {
        // H_p = 2, H_u = 1: J = (r0 - h)² + (r1 - h - δu)² + u²/λ,
        // u* = δ(r1 - h) / (δ² + 1/λ).
        let q = qp(0.3, vec![1.0, 2.0], 1);
        let u = q.normal_equations_solution().unwrap();
        let expected = 0.1 * (2.0 - 0.3) / (0.01 + 10.0);
        assert!((u[0] - expected).abs() < 1e-15);
        let opt = frozen_optimum(&q, 0.0, &Vector::zeros(1), 1e-12, 5).unwrap();
        assert!((opt.x[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn newton_agrees_with_normal_equations() {
        let q = qp(-3.0, (0..10).map(|i| (i as f64 * 0.7).sin()).collect(), 10);
        let opt = frozen_optimum(&q, 0.0, &Vector::from_element(10, 1.0), 1e-12, 5).unwrap();
        let ne = q.normal_equations_solution().unwrap();
        assert!((opt.x - ne).amax() < 1e-8);
    }

    #[test]
    fn shorter_control_horizon_holds_zero() {
        let q = qp(0.0, vec![1.0; 6], 3);
        let g = q.prediction_matrix();
        assert_eq!(g.shape(), (6, 3));
        assert_eq!(g[(5, 2)], 0.1);
        assert_eq!(g[(2, 2)], 0.0);
        assert!(validate_cost(&q, 50, 2).unwrap().passed);
    }

    #[test]
    fn hessian_is_step_independent() {
        let a = qp(5.0, vec![1.0; 10], 10).constant_hessian();
        let b = qp(-50.0, vec![-3.0; 10], 10).constant_hessian();
        assert_eq!(a, b);
        let c = mpc_constants(&MpcConfig::default()).unwrap();
        assert!(c.m >= 20.0 && c.big_m < 21.0);
    }

    #[test]
    fn horizon_errors() {
        let path = TabulatedPath {
            points: vec![(0.0, 0.0); 5],
        };
        let s = MpcConfig::default().start;
        assert!(mpc_horizon_cost(&s, Axis::X, &path, 0, 10, 10, 0.1, 0.1).is_err());
        assert!(mpc_horizon_cost(&s, Axis::X, &path, 0, 5, 5, 0.1, 0.1).is_ok());
        assert!(mpc_horizon_cost(&s, Axis::X, &path, 0, 5, 5, 0.0, 0.1).is_err());
        assert!(mpc_horizon_cost(&s, Axis::X, &path, 0, 5, 6, 0.1, 0.1).is_err());
    }

    #[test]
    fn axis_cost_validates_and_needs_alg2() {
        let config = MpcConfig {
            steps: 30,
            ..MpcConfig::default()
        };
        let path: Arc<dyn ReferencePath> = Arc::new(SinePath { delta: 0.1 });
        let run = simulate(&config, Algorithm::Alg2, path.clone()).unwrap();
        assert_eq!(run.records.len(), 30);
        assert_eq!(run.states.len(), 31);
        assert!(matches!(
            simulate(&config, Algorithm::Alg1, path.clone()),
            Err(Error::MissingTimeDerivative)
        ));
        let cost = MpcAxisCost::new(Axis::Y, path, 10, 10, 0.1, 0.1, 0.5).unwrap();
        for h in [0.6, 0.8, 1.1] {
            cost.push_head(h);
        }
        assert!(validate_cost(&cost, 100, 4).unwrap().passed);
        assert!(cost.value(&Vector::zeros(10), 0.9).is_nan());
    }

    #[test]
    fn first_applied_control_is_initial_sequence() {
        let config = MpcConfig {
            steps: 1,
            ..MpcConfig::default()
        };
        let run = simulate(
            &config,
            Algorithm::GradientDescent,
            Arc::new(SinePath { delta: 0.1 }),
        )
        .unwrap();
        let (h0x, h0y) = config.start.head();
        let (h1x, h1y) = run.states[1].head();
        assert!((h1x - h0x - 0.1).abs() < 1e-12 && (h1y - h0y - 0.1).abs() < 1e-12);
    }
}
