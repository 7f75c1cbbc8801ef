//! Optimal subsampling estimators for massive censored and left-truncated
//! lifetime data.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod estimators;
pub mod likelihood;
pub mod models;
pub mod optimizer;
pub mod quad;
pub mod rng;
pub mod subsampling;
pub mod uncertainty;

mod reduce;

pub use error::{Error, Result};
pub use likelihood::{Dataset, Observation, WeightedDraw};
pub use models::{ModelKind, ParamVector};
pub use optimizer::{maximize, Evaluation, Objective, OptimResult, OptimizerConfig};
