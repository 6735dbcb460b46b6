use thiserror::Error;

/// Errors raised by the modelling and evaluation code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("warp inverse did not converge after {iterations} iterations (best iterate {best}, residual {residual:e})")]
    InverseNotConverged {
        iterations: usize,
        best: f64,
        residual: f64,
    },

    #[error("covariance matrix is not positive definite even with jitter {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error("optimisation failed: {0}")]
    OptimizationFailed(String),

    #[error("zero predictive density for observed labels at indices {0:?}")]
    SupportViolation(Vec<usize>),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("linex loss overflow: w*(yhat - y) = {0} exceeds 700")]
    LinexOverflow(f64),
}

pub type Result<T, E = GpError> = std::result::Result<T, E>;
