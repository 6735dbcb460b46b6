//! Synthetic data drawn from a GP prior, optionally pushed through an
//! inverse warp to get positive, skewed labels.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GpError, Result};
use crate::gp::{jittered_cholesky, Dataset};
use crate::kernels::{gram_matrix, KernelParams, KernelSpec};
use crate::warping::Warp;

/// Generative settings. `noise_variance` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kernel: KernelSpec,
    pub kernel_params: KernelParams,
    pub noise_variance: f64,
    /// Labels are `warp⁻¹(f(x) + ε)`.
    pub warp: Warp,
}

/// Samples `X ~ U[-1, 1]^dim`, `f ~ GP(0, k)`, `ε ~ N(0, σ_n²)` and returns
/// labels `warp⁻¹(f + ε)`. Deterministic in `seed`.
pub fn generate_synthetic(n: usize, dim: usize, spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..=1.0));
    let latent = sample_latent(&x, spec, &mut rng)?;
    let y = latent
        .iter()
        .map(|z| spec.warp.inverse(*z))
        .collect::<Result<Vec<f64>>>()?;
    Dataset::new(x, DVector::from_vec(y))
}

/// `f(X) + ε` at fixed inputs.
pub fn sample_latent<R: Rng + ?Sized>(x: &DMatrix<f64>, spec: &SynthSpec, rng: &mut R) -> Result<DVector<f64>> {
    if x.nrows() == 0 {
        return Err(GpError::InvalidInput("need at least one point".into()));
    }
    if !(spec.noise_variance >= 0.0 && spec.noise_variance.is_finite()) {
        return Err(GpError::InvalidInput(format!(
            "noise variance must be non-negative, got {}",
            spec.noise_variance
        )));
    }
    let n = x.nrows();
    let k = gram_matrix(&spec.kernel, &spec.kernel_params, x)?;
    let (chol, _) = jittered_cholesky(k)?;
    let u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = chol.l_dirty().lower_triangle() * u;
    let sd = spec.noise_variance.sqrt();
    Ok(DVector::from_fn(n, |i, _| f[i] + sd * rng.sample::<f64, _>(StandardNormal)))
}
