//! Gaussian process regression with warped likelihoods, predictive-density
//! evaluation and minimum-Bayes-risk estimators for asymmetric losses.

pub mod error;
pub mod gp;
pub mod harness;
pub mod kernels;
pub mod metrics;
pub mod normal;
pub mod optimize;
pub mod predictive;
pub mod quadrature;
pub mod warping;

pub use error::{GpError, Result};
