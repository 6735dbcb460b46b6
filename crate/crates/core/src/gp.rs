//! Exact GP regression in latent (warped) space.
//!
//! With `z = f(y)` and `K_y = K + σ_n² I`, the negative log marginal
//! likelihood is
//!
//! ```text
//! ½ zᵀ K_y⁻¹ z + ½ log|K_y| + (n/2) log 2π − Σ_i log f'(y_i)
//! ```
//!
//! The last term is the change-of-variables Jacobian; it vanishes for the
//! identity warp.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::kernels::{cross_covariance, gram_gradient_traces, gram_matrix, KernelParams, KernelSpec};
use crate::warping::{Warp, WarpParams, WarpSpec};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Feature matrix (one row per instance) with aligned responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    responses: DVector<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if features.nrows() != responses.len() {
            return Err(GpError::InvalidInput(format!(
                "{} feature rows but {} responses",
                features.nrows(),
                responses.len()
            )));
        }
        if features.nrows() == 0 {
            return Err(GpError::InvalidInput("empty dataset".into()));
        }
        if let Some(i) = (0..features.nrows()).find(|&i| features.row(i).iter().any(|v| !v.is_finite())) {
            return Err(GpError::InvalidInput(format!("non-finite feature in row {i}")));
        }
        if let Some(i) = responses.iter().position(|v| !v.is_finite()) {
            return Err(GpError::InvalidInput(format!("non-finite response in row {i}")));
        }
        Ok(Self { features, responses })
    }

    pub fn from_rows(rows: &[Vec<f64>], responses: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(GpError::InvalidInput(format!(
                "row {i} has {} features, expected {d}",
                rows[i].len()
            )));
        }
        let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(features, DVector::from_vec(responses))
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// Sub-dataset with the given rows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        Self {
            features: DMatrix::from_fn(idx.len(), d, |i, j| self.features[(idx[i], j)]),
            responses: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.responses[i])),
        }
    }

    pub fn with_responses(&self, responses: DVector<f64>) -> Result<Self> {
        Self::new(self.features.clone(), responses)
    }

    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        Self::new(features, self.responses.clone())
    }
}

/// Kernel and warp choice for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kernel: KernelSpec,
    pub warp: WarpSpec,
}

impl ModelSpec {
    pub fn new(kernel: KernelSpec, warp: WarpSpec) -> Self {
        Self { kernel, warp }
    }

    /// Length of the flattened hyperparameter vector for `dim` inputs.
    pub fn num_params(&self, dim: usize) -> usize {
        self.kernel.num_params(dim) + 1 + self.warp.num_params()
    }

    /// Index of the noise variance in the flattened vector.
    pub fn noise_index(&self, dim: usize) -> usize {
        self.kernel.num_params(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub kernel: KernelParams,
    pub noise_variance: f64,
    /// Tanh-sum parameters; `None` for identity and log warps.
    pub warp: Option<WarpParams>,
}

impl Hyperparams {
    pub fn new(kernel: KernelParams, noise_variance: f64, warp: Option<WarpParams>) -> Self {
        Self {
            kernel,
            noise_variance,
            warp,
        }
    }

    pub fn validate(&self, spec: &ModelSpec, dim: usize) -> Result<()> {
        self.kernel.validate(&spec.kernel, dim)?;
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(GpError::InvalidInput(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        self.build_warp(&spec.warp).map(|_| ())
    }

    pub fn build_warp(&self, spec: &WarpSpec) -> Result<Warp> {
        match (spec, &self.warp) {
            (WarpSpec::Identity, None) => Ok(Warp::identity()),
            (WarpSpec::Log, None) => Ok(Warp::log()),
            (s, Some(p)) => Warp::new(*s, p.clone()),
            (s, None) => Err(GpError::InvalidInput(format!("warp {} needs parameters", s.name()))),
        }
    }

    /// Natural-space vector `[σ_v, l.., σ_n², a.., b.., c..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.kernel.lengthscales.len());
        v.push(self.kernel.variance);
        v.extend_from_slice(&self.kernel.lengthscales);
        v.push(self.noise_variance);
        if let Some(w) = &self.warp {
            v.extend(w.to_vec());
        }
        v
    }

    pub fn from_vec(spec: &ModelSpec, dim: usize, v: &[f64]) -> Result<Self> {
        if v.len() != spec.num_params(dim) {
            return Err(GpError::InvalidInput(format!(
                "expected {} hyperparameters, got {}",
                spec.num_params(dim),
                v.len()
            )));
        }
        let nl = spec.kernel.num_lengthscales(dim);
        let warp = if spec.warp.has_params() {
            Some(WarpParams::from_slice(spec.warp.terms(), &v[nl + 2..]))
        } else {
            None
        };
        Ok(Self {
            kernel: KernelParams::new(v[0], v[1..=nl].to_vec()),
            noise_variance: v[nl + 1],
            warp,
        })
    }
}

/// Latent Gaussian predictive `N(mean, variance)`; variance includes noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentPredictive {
    pub mean: f64,
    pub variance: f64,
}

impl LatentPredictive {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(GpError::InvalidInput(format!(
                "latent predictive needs finite mean and positive variance, got N({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Cholesky of `k` with escalating diagonal jitter. Returns the factor and
/// the jitter that was added (0 when none was needed).
pub(crate) fn jittered_cholesky(k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(k.clone()) {
        return Ok((ch, 0.0));
    }
    let n = k.nrows();
    let mean_diag = k.diagonal().sum() / n as f64;
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(kj) {
            return Ok((ch, jitter));
        }
        rel *= 10.0;
    }
    Err(GpError::IllConditioned {
        jitter: JITTER_MAX * mean_diag,
    })
}

/// `(LLᵀ)⁻¹` via `L⁻¹`, exploiting the triangular structure.
pub(crate) fn spd_inverse(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    let l = chol.l_dirty();
    let n = l.nrows();
    let ls = l.as_slice();
    // Column j of M = L⁻¹ by column-oriented forward substitution; storage
    // is column-major so every inner loop is contiguous.
    let mut m = vec![0.0; n * n];
    for j in 0..n {
        let mc = &mut m[j * n..(j + 1) * n];
        mc[j] = 1.0;
        for k in j..n {
            let lk = &ls[k * n..(k + 1) * n];
            let v = mc[k] / lk[k];
            mc[k] = v;
            for i in k + 1..n {
                mc[i] -= lk[i] * v;
            }
        }
    }
    // (MᵀM)_ab = Σ_{i ≥ max(a, b)} M_ia M_ib.
    let mut inv = DMatrix::zeros(n, n);
    for a in 0..n {
        let ca = &m[a * n..(a + 1) * n];
        for b in a..n {
            let cb = &m[b * n..(b + 1) * n];
            let v: f64 = ca[b..].iter().zip(&cb[b..]).map(|(x, y)| x * y).sum();
            inv[(a, b)] = v;
            inv[(b, a)] = v;
        }
    }
    inv
}

/// Everything derived from one factorisation of `K_y`.
struct Factorization {
    warp: Warp,
    z: DVector<f64>,
    log_jacobian: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn factorize(dataset: &Dataset, spec: &ModelSpec, hyp: &Hyperparams) -> Result<Factorization> {
    hyp.validate(spec, dataset.dim())?;
    let warp = hyp.build_warp(&spec.warp)?;
    let n = dataset.len();
    let mut z = DVector::zeros(n);
    let mut log_jacobian = 0.0;
    for (i, &y) in dataset.responses().iter().enumerate() {
        z[i] = warp.warp(y)?;
        log_jacobian += warp.warp_deriv(y)?.ln();
    }
    let mut k = gram_matrix(&spec.kernel, &hyp.kernel, dataset.features())?;
    for i in 0..n {
        k[(i, i)] += hyp.noise_variance;
    }
    let (chol, jitter) = jittered_cholesky(k)?;
    let alpha = chol.solve(&z);
    Ok(Factorization {
        warp,
        z,
        log_jacobian,
        chol,
        alpha,
        jitter,
    })
}

fn nll_from(f: &Factorization) -> f64 {
    let n = f.z.len() as f64;
    let half_logdet: f64 = f.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    0.5 * f.z.dot(&f.alpha) + half_logdet + 0.5 * n * LN_2PI - f.log_jacobian
}

/// Negative log marginal likelihood, including the warp Jacobian term.
pub fn nll(dataset: &Dataset, spec: &ModelSpec, hyp: &Hyperparams) -> Result<f64> {
    Ok(nll_from(&factorize(dataset, spec, hyp)?))
}

/// Analytic NLL gradient in natural parameter space, laid out as
/// [`Hyperparams::to_vec`].
pub fn nll_gradients(dataset: &Dataset, spec: &ModelSpec, hyp: &Hyperparams) -> Result<Vec<f64>> {
    nll_with_gradients(dataset, spec, hyp).map(|(_, g)| g)
}

/// NLL value and gradient from a single factorisation.
pub fn nll_with_gradients(dataset: &Dataset, spec: &ModelSpec, hyp: &Hyperparams) -> Result<(f64, Vec<f64>)> {
    let f = factorize(dataset, spec, hyp)?;
    let value = nll_from(&f);
    let n = dataset.len();

    // W = K_y⁻¹ − ααᵀ; ∂NLL/∂θ = ½ tr(W ∂K_y/∂θ) for covariance parameters.
    let mut w = spd_inverse(&f.chol);
    w.ger(-1.0, &f.alpha, &f.alpha, 1.0);

    let mut grad: Vec<f64> = gram_gradient_traces(&spec.kernel, &hyp.kernel, dataset.features(), &w)?
        .into_iter()
        .map(|t| 0.5 * t)
        .collect();
    grad.push(0.5 * w.trace());

    if spec.warp.has_params() {
        let np = spec.warp.num_params();
        let mut gw = vec![0.0; np];
        for i in 0..n {
            let pg = f.warp.param_gradients(dataset.responses()[i])?;
            for k in 0..np {
                gw[k] += f.alpha[i] * pg.value[k] - pg.log_deriv[k];
            }
        }
        grad.extend(gw);
    }
    Ok((value, grad))
}

/// Fitted model with cached factorisation of `K + σ_n² I`.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    dataset: Dataset,
    spec: ModelSpec,
    hyperparams: Hyperparams,
    warp: Warp,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    nll: f64,
}

/// Factorises the training covariance and solves for the weight vector.
pub fn fit_cache(dataset: &Dataset, spec: &ModelSpec, hyp: &Hyperparams) -> Result<TrainedModel> {
    let f = factorize(dataset, spec, hyp)?;
    let nll = nll_from(&f);
    Ok(TrainedModel {
        dataset: dataset.clone(),
        spec: *spec,
        hyperparams: hyp.clone(),
        warp: f.warp,
        chol: f.chol,
        alpha: f.alpha,
        jitter: f.jitter,
        nll,
    })
}

impl TrainedModel {
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn warp(&self) -> &Warp {
        &self.warp
    }

    /// Lower Cholesky factor of `K + (σ_n² + jitter) I`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn weight_vector(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Diagonal jitter added on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// NLL of the training data under this model.
    pub fn nll(&self) -> f64 {
        self.nll
    }

    pub fn predict_latent(&self, x: &[f64]) -> Result<LatentPredictive> {
        let ks = cross_covariance(&self.spec.kernel, &self.hyperparams.kernel, self.dataset.features(), x)?;
        let mean = ks.dot(&self.alpha);
        let mut v = ks;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let latent_var = (self.hyperparams.kernel.variance - v.norm_squared()).max(0.0);
        LatentPredictive::new(mean, latent_var + self.hyperparams.noise_variance)
    }

    pub fn predict_latent_batch(&self, x: &DMatrix<f64>) -> Result<Vec<LatentPredictive>> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict_latent(&row)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, positive: bool) -> Dataset {
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |i, _| {
            let s: f64 = x.row(i).sum();
            let v = s.sin() + 0.3 * rng.random_range(-1.0..1.0);
            if positive {
                v.exp()
            } else {
                v
            }
        });
        Dataset::new(x, y).unwrap()
    }

    fn hyp(spec: &ModelSpec, d: usize, rng: &mut ChaCha8Rng) -> Hyperparams {
        let nl = spec.kernel.num_lengthscales(d);
        let warp = spec.warp.has_params().then(|| {
            let t = spec.warp.terms();
            WarpParams::new(
                (0..t).map(|_| rng.random_range(0.2..1.5)).collect(),
                (0..t).map(|_| rng.random_range(0.2..1.5)).collect(),
                (0..t).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        });
        Hyperparams::new(
            KernelParams::new(rng.random_range(0.5..2.0), (0..nl).map(|_| rng.random_range(0.5..2.0)).collect()),
            rng.random_range(0.05..0.5),
            warp,
        )
    }

    /// Dense log-density of N(0, K_y) at z via LU inverse and determinant.
    fn dense_nll(ds: &Dataset, spec: &ModelSpec, h: &Hyperparams) -> f64 {
        let warp = h.build_warp(&spec.warp).unwrap();
        let n = ds.len();
        let z = DVector::from_iterator(n, ds.responses().iter().map(|y| warp.warp(*y).unwrap()));
        let jac: f64 = ds.responses().iter().map(|y| warp.warp_deriv(*y).unwrap().ln()).sum();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = spec.kernel.eval(&h.kernel, &ds.row(i), &ds.row(j)).unwrap();
            }
            k[(i, i)] += h.noise_variance;
        }
        let det = k.clone().lu().determinant();
        let inv = k.try_inverse().unwrap();
        0.5 * (z.transpose() * inv * &z)[(0, 0)] + 0.5 * det.ln() + 0.5 * n as f64 * LN_2PI - jac
    }

    fn eq_spec() -> ModelSpec {
        ModelSpec::new(KernelSpec::isotropic(KernelFamily::Eq), WarpSpec::Identity)
    }

    #[test]
    fn spd_inverse_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
        let k = &a * a.transpose() + DMatrix::identity(12, 12) * 0.5;
        let chol = Cholesky::new(k.clone()).unwrap();
        let inv = spd_inverse(&chol);
        assert!((&inv - chol.inverse()).amax() < 1e-10);
        assert!((&inv * &k - DMatrix::identity(12, 12)).amax() < 1e-10);
    }

    #[test]
    fn single_point_standard_normal() {
        let ds = Dataset::from_rows(&[vec![0.0]], vec![0.0]).unwrap();
        let h = Hyperparams::new(KernelParams::new(0.75, vec![1.0]), 0.25, None);
        assert_relative_eq!(nll(&ds, &eq_spec(), &h).unwrap(), 0.918_938_533_204_672_7, epsilon = 1e-14);
    }

    #[test]
    fn two_point_cholesky_by_hand() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0]], vec![0.5, -0.2]).unwrap();
        let h = Hyperparams::new(KernelParams::new(2.0, vec![1.0]), 0.1, None);
        let m = fit_cache(&ds, &eq_spec(), &h).unwrap();
        let k01 = 2.0 * (-0.5f64).exp();
        let l00 = 2.1f64.sqrt();
        let l10 = k01 / l00;
        let l11 = (2.1 - l10 * l10).sqrt();
        let l = m.cholesky_factor();
        assert_relative_eq!(l[(0, 0)], l00, epsilon = 1e-14);
        assert_relative_eq!(l[(1, 0)], l10, epsilon = 1e-14);
        assert_relative_eq!(l[(1, 1)], l11, epsilon = 1e-14);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cached_factor_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ds = random_dataset(&mut rng, 25, 3, false);
        let spec = ModelSpec::new(KernelSpec::ard(KernelFamily::Matern32), WarpSpec::Identity);
        let h = hyp(&spec, 3, &mut rng);
        let m = fit_cache(&ds, &spec, &h).unwrap();
        let mut ky = gram_matrix(&spec.kernel, &h.kernel, ds.features()).unwrap();
        for i in 0..25 {
            ky[(i, i)] += h.noise_variance;
        }
        let l = m.cholesky_factor();
        let rec = &l * l.transpose();
        assert!((&rec - &ky).norm() / ky.norm() < 1e-8);
        let resid = &ky * m.weight_vector() - ds.responses();
        assert!(resid.amax() < 1e-8);
    }

    #[test]
    fn nll_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for warp in [WarpSpec::Identity, WarpSpec::Log, WarpSpec::TanhSum { terms: 2 }] {
            for fam in [KernelFamily::Eq, KernelFamily::Matern32, KernelFamily::Matern52] {
                let n = rng.random_range(2..=30);
                let ds = random_dataset(&mut rng, n, 3, true);
                let spec = ModelSpec::new(KernelSpec::ard(fam), warp);
                let h = hyp(&spec, 3, &mut rng);
                let a = nll(&ds, &spec, &h).unwrap();
                let b = dense_nll(&ds, &spec, &h);
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn warped_nll_is_standard_nll_on_warped_targets_minus_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ds = random_dataset(&mut rng, 15, 2, true);
        let spec = ModelSpec::new(KernelSpec::isotropic(KernelFamily::Matern52), WarpSpec::TanhSum { terms: 3 });
        let h = hyp(&spec, 2, &mut rng);
        let warp = h.build_warp(&spec.warp).unwrap();
        let z = ds.responses().map(|y| warp.warp(y).unwrap());
        let jac: f64 = ds.responses().iter().map(|y| warp.warp_deriv(*y).unwrap().ln()).sum();
        let std_spec = ModelSpec::new(spec.kernel, WarpSpec::Identity);
        let std_h = Hyperparams::new(h.kernel.clone(), h.noise_variance, None);
        let standard = nll(&ds.with_responses(z).unwrap(), &std_spec, &std_h).unwrap();
        assert_relative_eq!(nll(&ds, &spec, &h).unwrap(), standard - jac, epsilon = 1e-10);
    }

    #[test]
    fn identity_warp_params_absent_or_empty_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ds = random_dataset(&mut rng, 10, 2, false);
        let spec = eq_spec();
        let h = Hyperparams::new(KernelParams::new(1.0, vec![0.7]), 0.1, None);
        let h2 = Hyperparams::new(KernelParams::new(1.0, vec![0.7]), 0.1, Some(WarpParams::empty()));
        assert_eq!(nll(&ds, &spec, &h).unwrap(), nll(&ds, &spec, &h2).unwrap());
    }

    #[test]
    fn nll_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ds = random_dataset(&mut rng, 20, 3, true);
        let spec = ModelSpec::new(KernelSpec::ard(KernelFamily::Matern52), WarpSpec::TanhSum { terms: 1 });
        let h = hyp(&spec, 3, &mut rng);
        let mut idx: Vec<usize> = (0..20).collect();
        idx.reverse();
        idx.swap(3, 11);
        let a = nll(&ds, &spec, &h).unwrap();
        let b = nll(&ds.subset(&idx), &spec, &h).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    fn check_gradients(ds: &Dataset, spec: &ModelSpec, h: &Hyperparams) {
        let g = nll_gradients(ds, spec, h).unwrap();
        let base = h.to_vec();
        // central differences in log-space for positive parameters
        let np = spec.num_params(ds.dim());
        let n_pos = np - spec.warp.terms();
        for k in 0..np {
            let step = 1e-5;
            let eval = |delta: f64| {
                let mut v = base.clone();
                if k < n_pos {
                    v[k] *= delta.exp();
                } else {
                    v[k] += delta;
                }
                nll(ds, spec, &Hyperparams::from_vec(spec, ds.dim(), &v).unwrap()).unwrap()
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            let an = if k < n_pos { g[k] * base[k] } else { g[k] };
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-4, "param {k}: analytic {an} fd {fd}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for warp in [WarpSpec::Identity, WarpSpec::Log, WarpSpec::TanhSum { terms: 2 }] {
            for fam in [KernelFamily::Eq, KernelFamily::Matern32, KernelFamily::Matern52] {
                for kspec in [KernelSpec::isotropic(fam), KernelSpec::ard(fam)] {
                    let ds = random_dataset(&mut rng, 20, 3, true);
                    let spec = ModelSpec::new(kspec, warp);
                    let h = hyp(&spec, 3, &mut rng);
                    check_gradients(&ds, &spec, &h);
                }
            }
        }
    }

    #[test]
    fn duplicate_rows_with_tiny_noise_stay_finite() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i / 3) as f64 * 0.1, 0.5]).collect();
        let ys: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let ds = Dataset::from_rows(&rows, ys).unwrap();
        let spec = ModelSpec::new(KernelSpec::isotropic(KernelFamily::Matern52), WarpSpec::Identity);
        let h = Hyperparams::new(KernelParams::new(1.0, vec![10.0]), 1e-14, None);
        let (v, g) = nll_with_gradients(&ds, &spec, &h).unwrap();
        assert!(v.is_finite());
        assert!(g.iter().all(|x| x.is_finite()));
        assert!(fit_cache(&ds, &spec, &h).is_ok());
    }

    #[test]
    fn hopeless_matrix_reports_ill_conditioning() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(jittered_cholesky(k), Err(GpError::IllConditioned { .. })));
    }

    #[test]
    fn prediction_reverts_to_prior_far_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ds = random_dataset(&mut rng, 10, 2, false);
        let spec = eq_spec();
        let h = Hyperparams::new(KernelParams::new(1.3, vec![0.5]), 0.2, None);
        let m = fit_cache(&ds, &spec, &h).unwrap();
        let p = m.predict_latent(&[100.0, -100.0]).unwrap();
        assert!(p.mean.abs() < 1e-12);
        assert_relative_eq!(p.variance, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_model_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let ds = random_dataset(&mut rng, 6, 1, true);
        for warp in [WarpSpec::Identity, WarpSpec::Log] {
            let spec = ModelSpec::new(KernelSpec::isotropic(KernelFamily::Matern52), warp);
            let h = Hyperparams::new(KernelParams::new(1.0, vec![1.0]), 1e-12, None);
            let m = fit_cache(&ds, &spec, &h).unwrap();
            let w = m.warp().clone();
            for i in 0..6 {
                let p = m.predict_latent(&ds.row(i)).unwrap();
                assert!((p.mean - w.warp(ds.responses()[i]).unwrap()).abs() < 1e-5);
                assert!(p.variance < 1e-6);
            }
        }
    }

    #[test]
    fn prediction_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let ds = random_dataset(&mut rng, 30, 3, false);
        let spec = ModelSpec::new(KernelSpec::ard(KernelFamily::Matern32), WarpSpec::Identity);
        let h = hyp(&spec, 3, &mut rng);
        let m = fit_cache(&ds, &spec, &h).unwrap();
        let mut ky = gram_matrix(&spec.kernel, &h.kernel, ds.features()).unwrap();
        for i in 0..30 {
            ky[(i, i)] += h.noise_variance;
        }
        let inv = ky.try_inverse().unwrap();
        for _ in 0..10 {
            let xs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let ks = DVector::from_fn(30, |i, _| spec.kernel.eval(&h.kernel, &ds.row(i), &xs).unwrap());
            let mean = (ks.transpose() * &inv * ds.responses())[(0, 0)];
            let var = h.kernel.variance - (ks.transpose() * &inv * &ks)[(0, 0)] + h.noise_variance;
            let p = m.predict_latent(&xs).unwrap();
            assert!((p.mean - mean).abs() < 1e-8);
            assert!((p.variance - var).abs() < 1e-8);
            assert!(p.variance <= h.kernel.variance + h.noise_variance + 1e-8);
        }
    }

    #[test]
    fn identity_warp_matches_standard_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let ds = random_dataset(&mut rng, 12, 2, false);
        let h = Hyperparams::new(KernelParams::new(1.1, vec![0.9]), 0.3, None);
        let a = fit_cache(&ds, &eq_spec(), &h).unwrap();
        let b = fit_cache(&ds, &eq_spec(), &Hyperparams { warp: Some(WarpParams::empty()), ..h.clone() }).unwrap();
        assert_eq!(a.weight_vector(), b.weight_vector());
        assert_eq!(a.predict_latent(&[0.1, 0.2]).unwrap(), b.predict_latent(&[0.1, 0.2]).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Dataset::from_rows(&[vec![1.0], vec![f64::NAN]], vec![0.0, 1.0]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0]], vec![0.0, 1.0]).is_err());
        let ds = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![0.0, 1.0]).unwrap();
        let spec = ModelSpec::new(KernelSpec::isotropic(KernelFamily::Eq), WarpSpec::Log);
        let h = Hyperparams::new(KernelParams::new(1.0, vec![1.0]), 0.1, None);
        assert!(matches!(nll(&ds, &spec, &h), Err(GpError::Domain(_))));
        let h = Hyperparams::new(KernelParams::new(1.0, vec![1.0]), 0.0, None);
        assert!(nll(&ds, &eq_spec(), &h).is_err());
    }
}
