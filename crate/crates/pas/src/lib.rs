//! Differentiable pooling-architecture search for graph classification.

pub mod data;
pub mod error;

pub use error::{PasError, Result};
