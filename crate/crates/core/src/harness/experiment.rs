//! Cross-validated evaluation of a grid of models.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::GpError;
use crate::gp::{Dataset, Hyperparams, TrainedModel};
use crate::harness::cv::{kfold_split, train_indices, Standardizer};
use crate::harness::HarnessError;
use crate::kernels::KernelFamily;
use crate::metrics::{mean_al_loss, mean_linex_loss, EvalRecord};
use crate::optimize::{two_pass_fit, OptimizeConfig};
use crate::predictive::PredictiveDistribution;
use crate::quadrature::QuadratureRule;
use crate::warping::WarpSpec;

/// One cell of the kernel × warp grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelChoice {
    pub kernel: KernelFamily,
    pub warp: WarpSpec,
}

impl ModelChoice {
    pub fn new(kernel: KernelFamily, warp: WarpSpec) -> Self {
        Self { kernel, warp }
    }

    pub fn name(&self) -> String {
        format!("{}_{}", self.kernel.name(), self.warp.name())
    }

    /// Kernel-major cartesian product.
    pub fn grid(kernels: &[KernelFamily], warps: &[WarpSpec]) -> Vec<Self> {
        kernels
            .iter()
            .flat_map(|k| warps.iter().map(move |w| Self::new(*k, *w)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub models: Vec<ModelChoice>,
    pub folds: usize,
    /// Restart count and tolerances. The seed is replaced per fold by one
    /// derived from [`ExperimentConfig::seed`].
    pub optimizer: OptimizeConfig,
    pub al_weights: Vec<f64>,
    pub linex_weights: Vec<f64>,
    pub quad_order: usize,
    /// Drives the fold partition and every optimiser restart.
    pub seed: u64,
    /// The experiment fails when more than this fraction of a model's
    /// folds fail.
    pub max_failed_fraction: f64,
    /// Labels below this are raised to it before a log warp.
    pub label_floor: f64,
    /// Print per-fold progress to stderr.
    pub verbose: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let warps = [
            WarpSpec::Identity,
            WarpSpec::Log,
            WarpSpec::TanhSum { terms: 1 },
            WarpSpec::TanhSum { terms: 2 },
            WarpSpec::TanhSum { terms: 3 },
        ];
        Self {
            models: ModelChoice::grid(&[KernelFamily::Eq, KernelFamily::Matern32, KernelFamily::Matern52], &warps),
            folds: 10,
            optimizer: OptimizeConfig::default(),
            al_weights: vec![3.0, 1.0 / 3.0],
            linex_weights: vec![-0.75, 0.75],
            quad_order: crate::quadrature::DEFAULT_ORDER,
            seed: 0,
            max_failed_fraction: 0.2,
            label_floor: 1e-6,
            verbose: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: String| Err(HarnessError::Usage(m));
        if self.models.is_empty() {
            return usage("no models configured".into());
        }
        if let Some(m) = self.models.iter().find(|m| m.warp.terms() > 3) {
            return usage(format!("tanh warps support 1 to 3 terms, got {}", m.warp.name()));
        }
        if self.folds < 2 {
            return usage(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.al_weights.is_empty() || self.linex_weights.is_empty() {
            return usage("weight lists must be non-empty".into());
        }
        if let Some(w) = self.al_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return usage(format!("asymmetric linear weights must be positive, got {w}"));
        }
        if let Some(w) = self.linex_weights.iter().find(|w| !(**w != 0.0 && w.is_finite())) {
            return usage(format!("linex weights must be non-zero, got {w}"));
        }
        if !(1..=200).contains(&self.quad_order) {
            return usage(format!("quadrature order must be in 1..=200, got {}", self.quad_order));
        }
        if !(0.0..=1.0).contains(&self.max_failed_fraction) {
            return usage("failure fraction must be in [0, 1]".into());
        }
        if !(self.label_floor > 0.0) {
            return usage("label floor must be positive".into());
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// Training-split transforms: feature z-scoring and, for log warps, the
/// label floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub standardizer: Standardizer,
    pub label_floor: Option<f64>,
}

impl Preprocessing {
    pub fn fit(train: &Dataset, warp: &WarpSpec, floor: f64) -> Self {
        Self {
            standardizer: Standardizer::fit(train.features()),
            label_floor: matches!(warp, WarpSpec::Log).then_some(floor),
        }
    }

    pub fn features(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.standardizer.transform(x)
    }

    /// Clamped labels and the number of entries changed.
    pub fn labels(&self, y: &[f64]) -> (Vec<f64>, usize) {
        match self.label_floor {
            None => (y.to_vec(), 0),
            Some(floor) => {
                let n = y.iter().filter(|v| **v < floor).count();
                (y.iter().map(|v| v.max(floor)).collect(), n)
            }
        }
    }

    pub fn apply(&self, raw: &Dataset) -> Result<(Dataset, usize), HarnessError> {
        let (y, clamped) = self.labels(raw.responses().as_slice());
        let ds = Dataset::new(self.features(raw.features()), DVector::from_vec(y))?;
        Ok((ds, clamped))
    }
}

/// Hash of everything that determines a fitted model's predictions.
pub fn model_fingerprint(model: &TrainedModel) -> String {
    let mut h = DefaultHasher::new();
    model.spec().hash(&mut h);
    let bits = |v: &[f64], h: &mut DefaultHasher| v.iter().for_each(|x| x.to_bits().hash(h));
    bits(&model.hyperparams().to_vec(), &mut h);
    bits(model.weight_vector().as_slice(), &mut h);
    bits(model.dataset().features().as_slice(), &mut h);
    bits(model.dataset().responses().as_slice(), &mut h);
    format!("{:016x}", h.finish())
}

/// Bayes-estimator outputs and mean loss for one weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedLoss {
    pub weight: f64,
    pub estimates: Vec<f64>,
    /// `None` when the loss diverged.
    pub value: Option<f64>,
    pub diverged: bool,
    /// Fingerprint of the model that produced `estimates`.
    pub model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    pub standardizer: Standardizer,
    pub clamped_train_labels: usize,
    pub clamped_test_labels: usize,
    /// NLL of the training split at the fitted hyperparameters.
    pub train_nll: f64,
    pub isotropic_nll: f64,
    pub hyperparams: Hyperparams,
    pub converged: bool,
    pub jitter: f64,
    pub model_fingerprint: String,
    pub eval: EvalRecord,
    pub al: Vec<WeightedLoss>,
    pub linex: Vec<WeightedLoss>,
    /// Largest gap between the predictive mean at the configured quadrature
    /// order and at twice that order. Only computed in debug builds.
    pub quadrature_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

/// Per-fold and mean values of one reported quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub weight: Option<f64>,
    /// Indexed by fold; `None` for failed folds and undefined values.
    pub per_fold: Vec<Option<f64>>,
    /// Unweighted mean over the defined fold values.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelChoice,
    pub name: String,
    pub folds: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
    pub metrics: Vec<MetricSummary>,
}

impl ModelReport {
    pub fn metric(&self, name: &str, weight: Option<f64>) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name && m.weight == weight)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metric(name, None).and_then(|m| m.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub dim: usize,
    pub partition: Vec<Vec<usize>>,
    pub models: Vec<ModelReport>,
}

impl ExperimentReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fits one model per fold, scores the held-out split and aggregates.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let partition = kfold_split(dataset.len(), config.folds, config.seed)?;
    let rule = QuadratureRule::gauss_hermite(config.quad_order)?;
    let mut models = Vec::with_capacity(config.models.len());
    let mut worst: Option<String> = None;
    for choice in &config.models {
        let mut folds = Vec::new();
        let mut failures = Vec::new();
        for f in 0..config.folds {
            match run_fold(dataset, &partition, f, choice, config, &rule) {
                Ok(r) => folds.push(r),
                Err(e) => failures.push(FoldFailure {
                    fold: f,
                    error: e.to_string(),
                }),
            }
            if config.verbose {
                let status = failures
                    .last()
                    .filter(|x| x.fold == f)
                    .map_or("ok".to_string(), |x| format!("failed: {}", x.error));
                eprintln!("{} fold {}/{}: {status}", choice.name(), f + 1, config.folds);
            }
        }
        if failures.len() as f64 > config.max_failed_fraction * config.folds as f64 {
            worst.get_or_insert_with(|| {
                format!("{}: {} of {} folds failed", choice.name(), failures.len(), config.folds)
            });
        }
        let metrics = summarise(&folds, config);
        models.push(ModelReport {
            model: *choice,
            name: choice.name(),
            folds,
            failures,
            metrics,
        });
    }
    let report = ExperimentReport {
        config: config.clone(),
        n: dataset.len(),
        dim: dataset.dim(),
        partition,
        models,
    };
    match worst {
        Some(message) => Err(HarnessError::FoldFailures {
            message,
            report: Box::new(report),
        }),
        None => Ok(report),
    }
}

fn run_fold(
    raw: &Dataset,
    partition: &[Vec<usize>],
    fold: usize,
    choice: &ModelChoice,
    config: &ExperimentConfig,
    rule: &QuadratureRule,
) -> Result<FoldResult, HarnessError> {
    let train_raw = raw.subset(&train_indices(partition, fold));
    let test_raw = raw.subset(&partition[fold]);
    let prep = Preprocessing::fit(&train_raw, &choice.warp, config.label_floor);
    let (train, clamped_train_labels) = prep.apply(&train_raw)?;

    let optimizer = OptimizeConfig {
        seed: fold_seed(config.seed, fold),
        ..config.optimizer.clone()
    };
    let fit = two_pass_fit(&train, choice.kernel, choice.warp, &optimizer)?;
    let model = &fit.model;

    let dists = predictive_distributions(model, &prep.features(test_raw.features()))?;
    let labels = test_raw.responses().as_slice().to_vec();
    let (density_labels, clamped_test_labels) = prep.labels(&labels);
    let medians = dists.iter().map(|d| d.median()).collect::<Result<Vec<_>, _>>()?;
    let log_densities = dists
        .iter()
        .zip(&density_labels)
        .map(|(d, y)| d.log_density(*y))
        .collect();
    let eval = EvalRecord::new(labels.clone(), medians, log_densities)?;

    let al = config
        .al_weights
        .iter()
        .map(|w| al_losses(model, &dists, &labels, *w))
        .collect::<Result<Vec<_>, _>>()?;
    let linex = config
        .linex_weights
        .iter()
        .map(|w| linex_losses(model, &dists, &labels, *w, rule))
        .collect::<Result<Vec<_>, _>>()?;

    let quadrature_error = if cfg!(debug_assertions) {
        let mut worst = 0.0f64;
        for d in &dists {
            worst = worst.max(d.quadrature_error(rule)?);
        }
        Some(worst)
    } else {
        None
    };

    Ok(FoldResult {
        fold,
        test_indices: partition[fold].clone(),
        standardizer: prep.standardizer,
        clamped_train_labels,
        clamped_test_labels,
        train_nll: fit.nll(),
        isotropic_nll: fit.isotropic.best_nll,
        hyperparams: model.hyperparams().clone(),
        converged: fit.ard.converged,
        jitter: model.jitter(),
        model_fingerprint: model_fingerprint(model),
        eval,
        al,
        linex,
        quadrature_error,
    })
}

/// Predictive distributions of `model` at already-standardised inputs.
pub fn predictive_distributions(
    model: &TrainedModel,
    x: &DMatrix<f64>,
) -> Result<Vec<PredictiveDistribution>, GpError> {
    model
        .predict_latent_batch(x)?
        .into_iter()
        .map(|l| PredictiveDistribution::new(l, model.warp().clone()))
        .collect()
}

/// Asymmetric-linear Bayes estimates from `model`'s predictive
/// distributions, scored against `labels`.
pub fn al_losses(
    model: &TrainedModel,
    dists: &[PredictiveDistribution],
    labels: &[f64],
    w: f64,
) -> Result<WeightedLoss, GpError> {
    let estimates = dists
        .iter()
        .map(|d| d.bayes_estimate_al(w))
        .collect::<Result<Vec<_>, _>>()?;
    let value = mean_al_loss(&estimates, labels, w)?;
    Ok(WeightedLoss {
        weight: w,
        estimates,
        value: Some(value),
        diverged: false,
        model_fingerprint: model_fingerprint(model),
    })
}

/// Linex counterpart of [`al_losses`]. An overflowing loss is flagged as
/// diverged instead of failing the fold.
pub fn linex_losses(
    model: &TrainedModel,
    dists: &[PredictiveDistribution],
    labels: &[f64],
    w: f64,
    rule: &QuadratureRule,
) -> Result<WeightedLoss, GpError> {
    let estimates = dists
        .iter()
        .map(|d| d.bayes_estimate_linex(w, rule))
        .collect::<Result<Vec<_>, _>>()?;
    let (value, diverged) = match mean_linex_loss(&estimates, labels, w) {
        Ok(v) => (Some(v), false),
        Err(GpError::LinexOverflow(_)) => (None, true),
        Err(e) => return Err(e),
    };
    Ok(WeightedLoss {
        weight: w,
        estimates,
        value,
        diverged,
        model_fingerprint: model_fingerprint(model),
    })
}

fn summary(metric: &str, weight: Option<f64>, folds: &[FoldResult], k: usize, get: impl Fn(&FoldResult) -> Option<f64>) -> MetricSummary {
    let mut per_fold = vec![None; k];
    for r in folds {
        per_fold[r.fold] = get(r);
    }
    let defined: Vec<f64> = per_fold.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    MetricSummary {
        metric: metric.into(),
        weight,
        per_fold,
        mean,
    }
}

fn summarise(folds: &[FoldResult], config: &ExperimentConfig) -> Vec<MetricSummary> {
    let k = config.folds;
    let mut out = vec![
        summary("nll", None, folds, k, |r| Some(r.train_nll)),
        summary("nlpd", None, folds, k, |r| r.eval.nlpd),
        summary("mae", None, folds, k, |r| Some(r.eval.mae)),
        summary("pearson_r", None, folds, k, |r| r.eval.pearson_r),
    ];
    for (i, w) in config.al_weights.iter().enumerate() {
        out.push(summary("al", Some(*w), folds, k, |r| r.al[i].value));
    }
    for (i, w) in config.linex_weights.iter().enumerate() {
        out.push(summary("linex", Some(*w), folds, k, |r| r.linex[i].value));
    }
    out
}
