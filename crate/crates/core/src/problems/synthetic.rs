//! Closed-form test costs.

use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemConstants, TimeVaryingCost, Vector};

/// Two-dimensional cost with an abrupt change at `jump_time`:
///
/// ```text
/// f(x, t) = (x₁ + x₂ - 0.01)² + (1 + s)x₂² + s·x₁·sin 2t,   s = e^{-(t - τ)}
/// ```
///
/// with `τ = 0` before the jump and `τ = jump_time` after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCost {
    pub jump_time: f64,
    /// Upper end of the time domain.
    pub horizon: f64,
}

impl Default for SyntheticCost {
    fn default() -> Self {
        Self {
            jump_time: 45.0,
            horizon: 90.0,
        }
    }
}

pub fn synthetic_cost() -> SyntheticCost {
    SyntheticCost::default()
}

impl SyntheticCost {
    fn tau(&self, t: f64) -> f64 {
        if t < self.jump_time {
            0.0
        } else {
            self.jump_time
        }
    }

    fn decay(&self, t: f64) -> f64 {
        (-(t - self.tau(t))).exp()
    }

    /// Exact constants over the box `|x₁| ≤ a`, `|x₂| ≤ b` for `t ≥ 0`.
    ///
    /// The Hessian eigenvalues range over `[3 - √5, 4 + 2√2]` as `s` moves
    /// through `(0, 1]`.
    pub fn analytic_constants(a: f64, b: f64) -> Result<ProblemConstants> {
        if !(a >= 0.0 && b >= 0.0) {
            return Err(Error::Domain(format!(
                "box half-widths must be nonnegative, got ({a}, {b})"
            )));
        }
        let sqrt5 = 5f64.sqrt();
        ProblemConstants::new(
            3.0 - sqrt5,
            4.0 + 2.0 * 2f64.sqrt(),
            b * b + sqrt5 * a,
            (5.0 + 4.0 * b * b).sqrt(),
            b * b + 5.0 * a,
        )
    }
}

impl TimeVaryingCost for SyntheticCost {
    fn dimension(&self) -> usize {
        2
    }

    fn value(&self, x: &Vector, t: f64) -> f64 {
        let s = self.decay(t);
        let r = x[0] + x[1] - 0.01;
        r * r + (1.0 + s) * x[1] * x[1] + s * x[0] * (2.0 * t).sin()
    }

    fn grad_x(&self, x: &Vector, t: f64) -> Vector {
        let s = self.decay(t);
        let r2 = 2.0 * (x[0] + x[1] - 0.01);
        Vector::from_vec(vec![r2 + s * (2.0 * t).sin(), r2 + 2.0 * (1.0 + s) * x[1]])
    }

    fn grad_t(&self, x: &Vector, t: f64) -> Option<f64> {
        let s = self.decay(t);
        let (sin, cos) = (2.0 * t).sin_cos();
        Some(-s * x[1] * x[1] + s * x[0] * (2.0 * cos - sin))
    }

    fn hessian(&self, _x: &Vector, t: f64) -> Option<Matrix> {
        let s = self.decay(t);
        Some(Matrix::from_row_slice(
            2,
            2,
            &[2.0, 2.0, 2.0, 2.0 + 2.0 * (1.0 + s)],
        ))
    }

    fn jumps_between(&self, t_prev: f64, t_next: f64) -> bool {
        t_prev < self.jump_time && self.jump_time <= t_next
    }

    fn time_domain(&self) -> (f64, f64) {
        (0.0, self.horizon)
    }
}

/// `f(x, t) = Σᵢ (xᵢ - t)²`, whose minimizer moves with unit speed along the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticDrift {
    pub dimension: usize,
    pub horizon: f64,
}

impl QuadraticDrift {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Input("dimension must be at least 1".into()));
        }
        Ok(Self {
            dimension,
            horizon: 100.0,
        })
    }

    /// Exact constants when `|xᵢ - t| ≤ max_deviation` on the region of interest.
    pub fn exact_constants(&self, max_deviation: f64) -> Result<ProblemConstants> {
        let n = self.dimension as f64;
        ProblemConstants::new(2.0, 2.0, 2.0 * n * max_deviation, 2.0 * n.sqrt(), 2.0 * n)
    }
}

impl TimeVaryingCost for QuadraticDrift {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn value(&self, x: &Vector, t: f64) -> f64 {
        x.iter().map(|xi| (xi - t) * (xi - t)).sum()
    }

    fn grad_x(&self, x: &Vector, t: f64) -> Vector {
        x.map(|xi| 2.0 * (xi - t))
    }

    fn grad_t(&self, x: &Vector, t: f64) -> Option<f64> {
        Some(x.iter().map(|xi| -2.0 * (xi - t)).sum())
    }

    fn hessian(&self, _x: &Vector, _t: f64) -> Option<Matrix> {
        Some(Matrix::identity(self.dimension, self.dimension) * 2.0)
    }

    fn time_domain(&self) -> (f64, f64) {
        (0.0, self.horizon)
    }
}
