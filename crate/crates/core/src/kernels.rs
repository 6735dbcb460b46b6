//! Stationary covariance functions: exponentiated quadratic and the
//! Matérn 3/2 and 5/2 kernels, with isotropic or per-dimension (ARD)
//! lengthscales.
//!
//! Every kernel is written as `variance * g(r²)` where `r²` is the
//! lengthscale-scaled squared distance. Derivatives with respect to the
//! lengthscales go through `dg/dr²`, which stays finite at `r² = 0` for all
//! three families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Eq,
    Matern32,
    Matern52,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Eq => "eq",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eq" | "rbf" => Ok(KernelFamily::Eq),
            "matern32" => Ok(KernelFamily::Matern32),
            "matern52" => Ok(KernelFamily::Matern52),
            other => Err(GpError::InvalidInput(format!("unknown kernel '{other}'"))),
        }
    }

    /// Correlation profile `g(r²)`, with `g(0) = 1`.
    #[inline]
    pub fn profile(self, r2: f64) -> f64 {
        match self {
            KernelFamily::Eq => (-0.5 * r2).exp(),
            KernelFamily::Matern32 => {
                let s = (3.0 * r2).sqrt();
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = (5.0 * r2).sqrt();
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    /// `dg/dr²`. Finite everywhere, including `r² = 0`.
    #[inline]
    pub fn profile_deriv(self, r2: f64) -> f64 {
        match self {
            KernelFamily::Eq => -0.5 * (-0.5 * r2).exp(),
            KernelFamily::Matern32 => {
                let s = (3.0 * r2).sqrt();
                -1.5 * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = (5.0 * r2).sqrt();
                -(5.0 / 6.0) * (1.0 + s) * (-s).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthscaleMode {
    Isotropic,
    Ard,
}

/// Kernel family plus lengthscale tying. Fields are private so a spec
/// cannot be mutated once built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscale_mode: LengthscaleMode,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale_mode: LengthscaleMode) -> Self {
        Self {
            family,
            lengthscale_mode,
        }
    }

    pub fn isotropic(family: KernelFamily) -> Self {
        Self::new(family, LengthscaleMode::Isotropic)
    }

    pub fn ard(family: KernelFamily) -> Self {
        Self::new(family, LengthscaleMode::Ard)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscale_mode(&self) -> LengthscaleMode {
        self.lengthscale_mode
    }

    /// Number of lengthscales this spec carries for `dim`-dimensional inputs.
    pub fn num_lengthscales(&self, dim: usize) -> usize {
        match self.lengthscale_mode {
            LengthscaleMode::Isotropic => 1,
            LengthscaleMode::Ard => dim,
        }
    }

    /// Number of hyperparameters (variance + lengthscales).
    pub fn num_params(&self, dim: usize) -> usize {
        1 + self.num_lengthscales(dim)
    }

    pub fn eval(&self, params: &KernelParams, x: &[f64], x2: &[f64]) -> Result<f64> {
        params.validate(self, x.len())?;
        let r2 = scaled_sq_distance(x, x2, params)?;
        Ok(params.variance * self.family.profile(r2))
    }
}

/// Signal variance and lengthscales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Self {
        Self {
            variance,
            lengthscales,
        }
    }

    pub fn validate(&self, spec: &KernelSpec, dim: usize) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(GpError::InvalidInput(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(GpError::InvalidInput(format!(
                "lengthscales must be positive, got {l}"
            )));
        }
        let expected = spec.num_lengthscales(dim);
        if self.lengthscales.len() != expected {
            return Err(GpError::InvalidInput(format!(
                "{:?} kernel on {dim} inputs needs {expected} lengthscale(s), got {}",
                spec.lengthscale_mode(),
                self.lengthscales.len()
            )));
        }
        Ok(())
    }

    #[inline]
    fn lengthscale(&self, i: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[i]
        }
    }
}

/// `Σ_i (x_i − x'_i)² / l_i²`, broadcasting a single lengthscale.
pub fn scaled_sq_distance(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(GpError::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            x2.len()
        )));
    }
    if params.lengthscales.len() != 1 && params.lengthscales.len() != x.len() {
        return Err(GpError::InvalidInput(format!(
            "{} lengthscales cannot broadcast to {} inputs",
            params.lengthscales.len(),
            x.len()
        )));
    }
    Ok(sq_dist_unchecked(x, x2, params))
}

#[inline]
fn sq_dist_unchecked(x: &[f64], x2: &[f64], params: &KernelParams) -> f64 {
    x.iter()
        .zip(x2)
        .enumerate()
        .map(|(i, (a, b))| {
            let d = (a - b) / params.lengthscale(i);
            d * d
        })
        .sum()
}

pub(crate) fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

/// Covariance matrix `K[i][j] = k(x_i, x_j)` over the rows of `x`. No jitter is added.
pub fn gram_matrix(spec: &KernelSpec, params: &KernelParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    params.validate(spec, x.ncols())?;
    let rows = rows(x);
    let n = rows.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.variance;
        for j in 0..i {
            let v = params.variance * spec.family.profile(sq_dist_unchecked(&rows[i], &rows[j], params));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Covariances between every row of `x` and a single point `xs`.
pub fn cross_covariance(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &DMatrix<f64>,
    xs: &[f64],
) -> Result<DVector<f64>> {
    params.validate(spec, x.ncols())?;
    if xs.len() != x.ncols() {
        return Err(GpError::InvalidInput(format!(
            "test point has {} features, training data has {}",
            xs.len(),
            x.ncols()
        )));
    }
    let rows = rows(x);
    Ok(DVector::from_iterator(
        rows.len(),
        rows.iter()
            .map(|r| params.variance * spec.family.profile(sq_dist_unchecked(r, xs, params))),
    ))
}

/// Partial derivatives of the Gram matrix in natural parameter space.
///
/// Returns `[∂K/∂σ_v, ∂K/∂l_1, ..., ∂K/∂l_L]` where `L` is 1 for isotropic
/// kernels and `D` for ARD.
pub fn gram_gradients(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    params.validate(spec, x.ncols())?;
    let rows = rows(x);
    let n = rows.len();
    let dim = x.ncols();
    let n_ls = spec.num_lengthscales(dim);
    let mut out = vec![DMatrix::zeros(n, n); 1 + n_ls];
    for i in 0..n {
        out[0][(i, i)] = 1.0;
        for j in 0..i {
            let r2 = sq_dist_unchecked(&rows[i], &rows[j], params);
            let g = spec.family.profile(r2);
            let dg = params.variance * spec.family.profile_deriv(r2);
            out[0][(i, j)] = g;
            out[0][(j, i)] = g;
            match spec.lengthscale_mode {
                LengthscaleMode::Isotropic => {
                    // ∂r²/∂l = −2 r² / l
                    let v = dg * (-2.0 * r2 / params.lengthscales[0]);
                    out[1][(i, j)] = v;
                    out[1][(j, i)] = v;
                }
                LengthscaleMode::Ard => {
                    for d in 0..dim {
                        let l = params.lengthscales[d];
                        let diff = rows[i][d] - rows[j][d];
                        let v = dg * (-2.0 * diff * diff / (l * l * l));
                        out[1 + d][(i, j)] = v;
                        out[1 + d][(j, i)] = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `tr(W ∂K/∂θ)` for each entry of [`gram_gradients`], for symmetric `W`,
/// without forming the derivative matrices.
pub fn gram_gradient_traces(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    params.validate(spec, x.ncols())?;
    let n = x.nrows();
    if w.shape() != (n, n) {
        return Err(GpError::InvalidInput(format!(
            "weight matrix is {}x{}, expected {n}x{n}",
            w.nrows(),
            w.ncols()
        )));
    }
    let rows = rows(x);
    let dim = x.ncols();
    let mut out = vec![0.0; 1 + spec.num_lengthscales(dim)];
    let inv_l3: Vec<f64> = params.lengthscales.iter().map(|l| -2.0 / (l * l * l)).collect();
    for j in 0..n {
        let wc = w.column(j);
        out[0] += wc[j];
        for i in j + 1..n {
            let r2 = sq_dist_unchecked(&rows[i], &rows[j], params);
            // Both triangles of the symmetric sum.
            let wij = 2.0 * wc[i];
            out[0] += wij * spec.family.profile(r2);
            let dg = wij * params.variance * spec.family.profile_deriv(r2);
            match spec.lengthscale_mode {
                LengthscaleMode::Isotropic => out[1] += dg * (-2.0 * r2 / params.lengthscales[0]),
                LengthscaleMode::Ard => {
                    for d in 0..dim {
                        let diff = rows[i][d] - rows[j][d];
                        out[1 + d] += dg * diff * diff * inv_l3[d];
                    }
                }
            }
        }
    }
    Ok(out)
}
