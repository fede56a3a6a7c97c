//! Hierarchical attention-based interpretable networks for high-dimensional
//! tabular classification.

pub mod attribution;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod prototypes;
pub mod training;

pub use error::{HainError, Result};
pub use numerics::{Matrix, Rng};
