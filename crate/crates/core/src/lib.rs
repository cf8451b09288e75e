//! Density-regularized stochastic neighbor embedding.
//!
//! The optimizer minimizes a sparse KL objective between perplexity-calibrated
//! input affinities and Student-t output similarities, plus a weighted
//! discrepancy between normalized log kNN densities of the two spaces.

pub mod affinity;
pub mod anomaly;
pub mod data;
pub mod density;
pub mod embed;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod neighbors;
pub mod preprocess;
pub mod sweep;

pub use error::{Error, Result};
pub use matrix::{DataMatrix, Matrix};
