//! Experiment generators.

pub mod mpc;
pub mod streaming_ls;
pub mod synthetic;

pub use mpc::{
    mpc_horizon_cost, reference_path, simulate, Axis, HorizonQP, MpcAxisCost, MpcConfig, MpcRun,
    ReferencePath, SinePath, TabulatedPath, UnicycleState,
};
pub use streaming_ls::{SlidingWindow, StreamingLs, StreamingLsConfig};
pub use synthetic::{synthetic_cost, QuadraticDrift, SyntheticCost};
