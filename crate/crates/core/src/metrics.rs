//! Evaluation metrics: NLPD, MAE, Pearson's r and the two asymmetric losses.
//!
//! Asymmetric linear (AL) loss weights underestimates by `w`:
//! `L = (ŷ − y)` if `ŷ > y`, else `w (y − ŷ)`. Its Bayes estimator is the
//! `w/(w+1)` quantile, so `w > 1` is the pessimistic (higher-effort) regime.
//!
//! Linex loss: `L = exp(wΔ) − wΔ − 1` with `Δ = ŷ − y`. Negative `w`
//! punishes underestimates exponentially.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{GpError, Result};

/// Largest admissible `w (ŷ − y)` before `exp` is considered to overflow.
pub const LINEX_EXPONENT_LIMIT: f64 = 700.0;

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GpError::InvalidInput(format!(
            "length mismatch: {} predictions vs {} labels",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(GpError::InvalidInput("no instances to score".into()));
    }
    Ok(())
}

/// Negative mean log predictive density. Any `-∞` entry is a support
/// violation and is reported with its indices rather than averaged.
pub fn nlpd(log_densities: &[f64]) -> Result<f64> {
    if log_densities.is_empty() {
        return Err(GpError::InvalidInput("no log densities".into()));
    }
    let bad: Vec<usize> = log_densities
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == f64::NEG_INFINITY)
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(GpError::SupportViolation(bad));
    }
    if let Some(v) = log_densities.iter().find(|v| !v.is_finite()) {
        return Err(GpError::InvalidInput(format!("non-finite log density {v}")));
    }
    Ok(-log_densities.iter().sum::<f64>() / log_densities.len() as f64)
}

pub fn mae(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    Ok(predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / labels.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson_r(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let n = labels.len();
    if n < 2 {
        return Err(GpError::UndefinedCorrelation("need at least two instances".into()));
    }
    let mp = predictions.iter().sum::<f64>() / n as f64;
    let my = labels.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, y) in predictions.iter().zip(labels) {
        let (dp, dy) = (p - mp, y - my);
        sxy += dp * dy;
        sxx += dp * dp;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(GpError::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-tailed p-value for `r` under the t approximation with `n − 2`
/// degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(GpError::UndefinedCorrelation("p-value needs at least three instances".into()));
    }
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| GpError::InvalidInput(e.to_string()))?;
    Ok(2.0 * dist.sf(t.abs()))
}

pub fn al_loss(prediction: f64, label: f64, w: f64) -> f64 {
    if prediction > label {
        prediction - label
    } else {
        w * (label - prediction)
    }
}

pub fn mean_al_loss(predictions: &[f64], labels: &[f64], w: f64) -> Result<f64> {
    check_lengths(predictions, labels)?;
    if !(w > 0.0 && w.is_finite()) {
        return Err(GpError::InvalidInput(format!("AL weight must be positive, got {w}")));
    }
    Ok(predictions.iter().zip(labels).map(|(p, y)| al_loss(*p, *y, w)).sum::<f64>() / labels.len() as f64)
}

pub fn linex_loss(prediction: f64, label: f64, w: f64) -> Result<f64> {
    let wd = w * (prediction - label);
    if wd > LINEX_EXPONENT_LIMIT {
        return Err(GpError::LinexOverflow(wd));
    }
    // exp_m1 keeps precision for small |wΔ|
    Ok((wd.exp_m1() - wd).max(0.0))
}

pub fn mean_linex_loss(predictions: &[f64], labels: &[f64], w: f64) -> Result<f64> {
    check_lengths(predictions, labels)?;
    if !(w != 0.0 && w.is_finite()) {
        return Err(GpError::InvalidInput(format!("linex weight must be non-zero, got {w}")));
    }
    let mut acc = 0.0;
    for (p, y) in predictions.iter().zip(labels) {
        acc += linex_loss(*p, *y, w)?;
    }
    Ok(acc / labels.len() as f64)
}

/// Per-instance predictions and log densities plus the aggregate scores
/// for one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub labels: Vec<f64>,
    pub predictions: Vec<f64>,
    pub log_densities: Vec<f64>,
    /// `None` when some label fell outside the predictive support.
    pub nlpd: Option<f64>,
    pub mae: f64,
    /// `None` when the correlation is undefined (constant vector).
    pub pearson_r: Option<f64>,
    pub pearson_p: Option<f64>,
}

impl EvalRecord {
    pub fn new(labels: Vec<f64>, predictions: Vec<f64>, log_densities: Vec<f64>) -> Result<Self> {
        check_lengths(&predictions, &labels)?;
        check_lengths(&log_densities, &labels)?;
        let nlpd = match nlpd(&log_densities) {
            Ok(v) => Some(v),
            Err(GpError::SupportViolation(_)) => None,
            Err(e) => return Err(e),
        };
        let mae = mae(&predictions, &labels)?;
        let pearson_r = pearson_r(&predictions, &labels).ok();
        let pearson_p = pearson_r.and_then(|r| pearson_p_value(r, labels.len()).ok());
        Ok(Self {
            labels,
            predictions,
            log_densities,
            nlpd,
            mae,
            pearson_r,
            pearson_p,
        })
    }

    pub fn support_violations(&self) -> Vec<usize> {
        self.log_densities
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == f64::NEG_INFINITY)
            .map(|(i, _)| i)
            .collect()
    }
}
