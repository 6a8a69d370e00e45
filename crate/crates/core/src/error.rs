use thiserror::Error;

use crate::model::Vector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value or gradient evaluated to NaN or infinity.
    #[error("non-finite {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },

    /// Algorithm 1 needs the analytic time derivative of the cost.
    #[error(
        "cost provides no time derivative; use alg2, which estimates it from cost differences"
    )]
    MissingTimeDerivative,

    #[error("cost provides no Hessian, required by {0}")]
    MissingHessian(&'static str),

    #[error("{0} requires problem constants (m, M)")]
    MissingConstants(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// Newton oracle ran out of iterations.
    #[error("oracle did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Vector,
    },

    /// Euler integration of the optimal trajectory drifted off the optimality manifold.
    #[error(
        "optimal-trajectory integration lost optimality at t = {t} (residual {residual:e}); \
         use more substeps or split the interval at jumps"
    )]
    OdeResidual { t: f64, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
