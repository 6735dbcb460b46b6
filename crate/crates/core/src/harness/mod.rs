//! Cross-validated experiments over a grid of kernels and warps, with
//! dataset ingestion, synthetic data and report emission.

pub mod cv;
pub mod data;
pub mod experiment;
pub mod persist;
pub mod report;
pub mod synth;

use thiserror::Error;

use crate::error::GpError;

pub use cv::{kfold_split, train_indices, Standardizer};
pub use data::load_dataset;
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport, FoldResult, ModelChoice};
pub use synth::{generate_synthetic, SynthSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Too many folds failed. The partial report is kept for inspection.
    #[error("numeric failure: {message}")]
    FoldFailures {
        message: String,
        report: Box<ExperimentReport>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data(_) | HarnessError::Io(_) => 2,
            HarnessError::Numeric(_) | HarnessError::FoldFailures { .. } => 3,
        }
    }
}

impl From<GpError> for HarnessError {
    fn from(e: GpError) -> Self {
        match e {
            GpError::InvalidInput(_) => HarnessError::Usage(e.to_string()),
            GpError::Domain(_) | GpError::SupportViolation(_) => HarnessError::Data(e.to_string()),
            _ => HarnessError::Numeric(e.to_string()),
        }
    }
}
