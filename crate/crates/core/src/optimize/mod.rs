//! Hyperparameter training: NLL minimisation in log-space with random
//! restarts, and the isotropic-then-ARD two-pass fit.

pub mod lbfgs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::gp::{fit_cache, nll_with_gradients, Dataset, Hyperparams, ModelSpec, TrainedModel};
use crate::kernels::{KernelFamily, KernelParams, KernelSpec, LengthscaleMode};
use crate::warping::{Warp, WarpParams, WarpSpec};

pub use lbfgs::{LbfgsOptions, Termination};

/// Log-parameters outside this box are rejected as unevaluable.
const LOG_BOUND: f64 = 25.0;
const INIT_ATTEMPTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub seed: u64,
    /// Restrict the ARD pass of [`two_pass_fit`] to the lengthscales.
    pub pass2_lengthscales_only: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 1000,
            grad_tol: 1e-5,
            f_tol: 1e-9,
            seed: 0,
            pass2_lengthscales_only: false,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(GpError::InvalidInput("restarts must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.f_tol > 0.0) {
            return Err(GpError::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            f_tol: self.f_tol,
            ..LbfgsOptions::default()
        }
    }
}

/// Outcome of a single local optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub converged: bool,
    /// ∞-norm of the log-space gradient at the returned point.
    pub grad_inf_norm: f64,
    pub hyperparams: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub best: Hyperparams,
    pub best_nll: f64,
    pub best_restart: usize,
    /// One entry per restart, in restart order. `None` when the restart
    /// could not find an evaluable starting point.
    pub runs: Vec<Option<RunReport>>,
}

impl OptimizeReport {
    pub fn final_nlls(&self) -> Vec<Option<f64>> {
        self.runs.iter().map(|r| r.as_ref().map(|r| r.final_nll)).collect()
    }
}

/// Number of leading entries of the flattened vector that are positive and
/// optimised on the log scale; the trailing `c` offsets stay raw.
fn positive_count(spec: &ModelSpec, dim: usize) -> usize {
    spec.num_params(dim) - spec.warp.terms()
}

fn to_log_space(spec: &ModelSpec, dim: usize, h: &Hyperparams) -> Vec<f64> {
    let npos = positive_count(spec, dim);
    h.to_vec()
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i < npos { v.ln() } else { v })
        .collect()
}

fn from_log_space(spec: &ModelSpec, dim: usize, theta: &[f64]) -> Result<Hyperparams> {
    let npos = positive_count(spec, dim);
    let v: Vec<f64> = theta
        .iter()
        .enumerate()
        .map(|(i, t)| if i < npos { t.exp() } else { *t })
        .collect();
    Hyperparams::from_vec(spec, dim, &v)
}

/// NLL and its gradient with respect to the log-space parameters.
pub fn log_space_objective(
    dataset: &Dataset,
    spec: &ModelSpec,
    theta: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let dim = dataset.dim();
    let npos = positive_count(spec, dim);
    if theta[..npos].iter().any(|t| t.abs() > LOG_BOUND) || theta.iter().any(|t| !t.is_finite()) {
        return None;
    }
    let h = from_log_space(spec, dim, theta).ok()?;
    let natural = h.to_vec();
    let (v, mut g) = nll_with_gradients(dataset, spec, &h).ok()?;
    for i in 0..npos {
        g[i] *= natural[i];
    }
    Some((v, g))
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Random starting point. Variances are drawn relative to the variance of
/// the initially warped responses so the ranges are scale-free.
pub fn random_init<R: Rng + ?Sized>(dataset: &Dataset, spec: &ModelSpec, rng: &mut R) -> Result<Hyperparams> {
    let ys: Vec<f64> = dataset.responses().iter().copied().collect();
    let n = ys.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / n;
    let y_var = sample_variance(&ys);
    let warp_params = spec
        .warp
        .has_params()
        .then(|| WarpParams::random_init(&spec.warp, rng, y_mean, y_var));
    let warp = match &warp_params {
        Some(p) => Warp::new(spec.warp, p.clone())?,
        None if spec.warp == WarpSpec::Log => Warp::log(),
        None => Warp::identity(),
    };
    let z = ys.iter().map(|y| warp.warp(*y)).collect::<Result<Vec<_>>>()?;
    let scale = sample_variance(&z).max(1e-8);
    let variance = scale * rng.random_range(-2.0..1.0f64).exp();
    let noise = scale * rng.random_range(-2.0..1.0f64).exp();
    let lengthscales = (0..spec.kernel.num_lengthscales(dataset.dim()))
        .map(|_| rng.random_range(-1.0..2.0f64).exp())
        .collect();
    Ok(Hyperparams::new(KernelParams::new(variance, lengthscales), noise, warp_params))
}

/// Local optimisation from `init`. When `free` is given, only those
/// flattened indices move.
pub fn minimize_from(
    dataset: &Dataset,
    spec: &ModelSpec,
    init: &Hyperparams,
    config: &OptimizeConfig,
    free: Option<&[usize]>,
) -> Result<RunReport> {
    let dim = dataset.dim();
    init.validate(spec, dim)?;
    let theta0 = to_log_space(spec, dim, init);
    let all: Vec<usize> = (0..theta0.len()).collect();
    let free = free.unwrap_or(&all);
    let embed = |sub: &[f64]| {
        let mut full = theta0.clone();
        for (k, &i) in free.iter().enumerate() {
            full[i] = sub[k];
        }
        full
    };
    let objective = |sub: &[f64]| {
        let (v, g) = log_space_objective(dataset, spec, &embed(sub))?;
        Some((v, free.iter().map(|&i| g[i]).collect()))
    };
    let x0: Vec<f64> = free.iter().map(|&i| theta0[i]).collect();
    let res = lbfgs::minimize(objective, &x0, &config.lbfgs_options()).ok_or_else(|| {
        GpError::OptimizationFailed("objective cannot be evaluated at the starting point".into())
    })?;
    let hyperparams = from_log_space(spec, dim, &embed(&res.x))?;
    let grad_inf_norm = res.grad_inf_norm();
    Ok(RunReport {
        initial_nll: res.trace[0],
        final_nll: res.f,
        iterations: res.iterations,
        evaluations: res.evaluations,
        termination: res.termination,
        converged: matches!(
            res.termination,
            Termination::GradientTolerance | Termination::FunctionTolerance
        ),
        grad_inf_norm,
        hyperparams,
    })
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Best of `config.restarts` local optimisations from random starts.
/// Restart `i` draws from its own stream, so adding restarts never changes
/// the earlier ones.
pub fn minimize_nll(dataset: &Dataset, spec: &ModelSpec, config: &OptimizeConfig) -> Result<OptimizeReport> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(GpError::InvalidInput("training needs at least 2 instances".into()));
    }
    let mut runs = Vec::with_capacity(config.restarts);
    let mut failures = Vec::new();
    for restart in 0..config.restarts {
        let mut rng = restart_rng(config.seed, restart);
        let mut run = None;
        for _ in 0..INIT_ATTEMPTS {
            let init = random_init(dataset, spec, &mut rng)?;
            match minimize_from(dataset, spec, &init, config, None) {
                Ok(r) => {
                    run = Some(r);
                    break;
                }
                Err(e) => failures.push(format!("restart {restart}: {e}")),
            }
        }
        runs.push(run);
    }
    let (best_restart, best) = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
        .min_by(|a, b| a.1.final_nll.total_cmp(&b.1.final_nll))
        .ok_or_else(|| GpError::OptimizationFailed(format!("all restarts failed: {}", failures.join("; "))))?;
    Ok(OptimizeReport {
        best: best.hyperparams.clone(),
        best_nll: best.final_nll,
        best_restart,
        runs,
    })
}

/// Result of the isotropic-then-ARD procedure.
#[derive(Debug, Clone)]
pub struct TwoPassFit {
    pub model: TrainedModel,
    pub isotropic: OptimizeReport,
    pub ard: RunReport,
}

impl TwoPassFit {
    pub fn nll(&self) -> f64 {
        self.ard.final_nll
    }
}

/// Optimises an isotropic kernel with random restarts, then expands the
/// lengthscale to one per feature and refines from that optimum.
pub fn two_pass_fit(
    dataset: &Dataset,
    kernel: KernelFamily,
    warp: WarpSpec,
    config: &OptimizeConfig,
) -> Result<TwoPassFit> {
    let dim = dataset.dim();
    let iso_spec = ModelSpec::new(KernelSpec::new(kernel, LengthscaleMode::Isotropic), warp);
    let isotropic = minimize_nll(dataset, &iso_spec, config)?;

    let ard_spec = ModelSpec::new(KernelSpec::new(kernel, LengthscaleMode::Ard), warp);
    let mut start = isotropic.best.clone();
    start.kernel.lengthscales = vec![start.kernel.lengthscales[0]; dim];
    let lengthscale_idx: Vec<usize> = (1..=dim).collect();
    let free = config.pass2_lengthscales_only.then_some(lengthscale_idx.as_slice());
    let ard = minimize_from(dataset, &ard_spec, &start, config, free)?;
    let model = fit_cache(dataset, &ard_spec, &ard.hyperparams)?;
    Ok(TwoPassFit { model, isotropic, ard })
}
