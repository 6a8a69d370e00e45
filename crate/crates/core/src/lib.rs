//! Prediction-correction tracking of time-varying convex costs.
//!
//! A cost `f(x, t)` is sampled every `δ` seconds. Each tracker produces one
//! iterate per sample using a constant number of gradient evaluations.

// `!(a > b)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod error;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{
    Algorithm, Matrix, ProblemConstants, SolverConfig, SolverState, TimeVaryingCost,
    TrajectoryRecord, Vector,
};
