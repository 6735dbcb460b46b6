//! Hyperparameter dump for a single fitted model.
//!
//! Only the hyperparameters and preprocessing are stored. Predicting
//! rebuilds the factorisation from the original training files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::gp::{fit_cache, Dataset, Hyperparams, ModelSpec, TrainedModel};
use crate::harness::experiment::{predictive_distributions, ModelChoice, Preprocessing};
use crate::harness::HarnessError;
use crate::kernels::{KernelSpec, LengthscaleMode};
use crate::optimize::{two_pass_fit, OptimizeConfig};
use crate::predictive::PredictiveDistribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: ModelChoice,
    pub spec: ModelSpec,
    pub hyperparams: Hyperparams,
    pub preprocessing: Preprocessing,
    pub n: usize,
    pub dim: usize,
    pub train_nll: f64,
    pub isotropic_nll: f64,
    pub converged: bool,
    pub clamped_labels: usize,
}

impl SavedModel {
    /// Two-pass fit on the whole dataset.
    pub fn fit(
        raw: &Dataset,
        model: ModelChoice,
        optimizer: &OptimizeConfig,
        label_floor: f64,
    ) -> Result<(Self, TrainedModel), HarnessError> {
        let preprocessing = Preprocessing::fit(raw, &model.warp, label_floor);
        let (train, clamped_labels) = preprocessing.apply(raw)?;
        let fit = two_pass_fit(&train, model.kernel, model.warp, optimizer)?;
        let saved = Self {
            model,
            spec: ModelSpec::new(KernelSpec::new(model.kernel, LengthscaleMode::Ard), model.warp),
            hyperparams: fit.model.hyperparams().clone(),
            preprocessing,
            n: raw.len(),
            dim: raw.dim(),
            train_nll: fit.nll(),
            isotropic_nll: fit.isotropic.best_nll,
            converged: fit.ard.converged,
            clamped_labels,
        };
        Ok((saved, fit.model))
    }

    /// Re-creates the trained model from the same raw training data.
    pub fn rebuild(&self, raw: &Dataset) -> Result<TrainedModel, HarnessError> {
        if raw.len() != self.n || raw.dim() != self.dim {
            return Err(HarnessError::Data(format!(
                "training data is {}x{}, model was fitted on {}x{}",
                raw.len(),
                raw.dim(),
                self.n,
                self.dim
            )));
        }
        let (train, _) = self.preprocessing.apply(raw)?;
        Ok(fit_cache(&train, &self.spec, &self.hyperparams)?)
    }

    /// Predictive distributions at raw (unstandardised) feature rows.
    pub fn predict(&self, model: &TrainedModel, rows: &[Vec<f64>]) -> Result<Vec<PredictiveDistribution>, HarnessError> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.dim) {
            return Err(HarnessError::Data(format!(
                "test features have {} columns, model expects {}",
                r.len(),
                self.dim
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = DMatrix::from_row_slice(rows.len(), self.dim, &flat);
        Ok(predictive_distributions(model, &self.preprocessing.features(&x))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Numeric(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }
}
