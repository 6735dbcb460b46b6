//! Observed-space predictive distributions.
//!
//! A prediction is a latent Gaussian `N(μ*, σ*²)` pushed through the inverse
//! warp. The density picks up the Jacobian `f'(y)`:
//!
//! ```text
//! p(y) = f'(y) / √(2πσ*²) · exp(−(f(y) − μ*)² / (2σ*²))
//! ```
//!
//! Quantiles (and hence the median) map through `f⁻¹` directly because `f`
//! is increasing; the mean and variance need quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::gp::LatentPredictive;
use crate::normal;
use crate::quadrature::QuadratureRule;
use crate::warping::Warp;

const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    latent: LatentPredictive,
    warp: Warp,
}

impl PredictiveDistribution {
    pub fn new(latent: LatentPredictive, warp: Warp) -> Result<Self> {
        let latent = LatentPredictive::new(latent.mean, latent.variance)?;
        Ok(Self { latent, warp })
    }

    /// Plain Gaussian predictive (identity warp).
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::new(LatentPredictive::new(mean, variance)?, Warp::identity())
    }

    pub fn latent(&self) -> &LatentPredictive {
        &self.latent
    }

    pub fn warp(&self) -> &Warp {
        &self.warp
    }

    /// Log density at `y`. Returns `f64::NEG_INFINITY` exactly when `y` is
    /// outside the support of the warp (e.g. `y ≤ 0` under a log warp); the
    /// log-space evaluation never underflows to `-∞` otherwise.
    pub fn log_density(&self, y: f64) -> f64 {
        if !self.warp.in_domain(y) {
            return f64::NEG_INFINITY;
        }
        let z = self.warp.warp(y).expect("domain checked");
        let jac = self.warp.warp_deriv(y).expect("domain checked");
        jac.ln() + normal::log_pdf(z, self.latent.mean, self.latent.variance)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if !self.warp.in_domain(y) {
            return if y.is_nan() { f64::NAN } else { 0.0 };
        }
        let z = self.warp.warp(y).expect("domain checked");
        normal::cdf((z - self.latent.mean) / self.latent.std_dev())
    }

    /// `f⁻¹(μ*)`.
    pub fn median(&self) -> Result<f64> {
        self.warp.inverse(self.latent.mean)
    }

    /// Mean and variance in observed space by Gauss-Hermite quadrature of
    /// `f⁻¹` against the latent Gaussian. The variance is floored at 1e-12.
    pub fn mean_and_variance(&self, rule: &QuadratureRule) -> Result<(f64, f64)> {
        let (mu, sd) = (self.latent.mean, self.latent.std_dev());
        let ys = rule
            .nodes()
            .iter()
            .map(|t| self.warp.inverse(mu + std::f64::consts::SQRT_2 * sd * t))
            .collect::<Result<Vec<f64>>>()?;
        let norm = std::f64::consts::PI.sqrt();
        let mean = ys.iter().zip(rule.weights()).map(|(y, w)| w * y).sum::<f64>() / norm;
        let second = ys.iter().zip(rule.weights()).map(|(y, w)| w * y * y).sum::<f64>() / norm;
        let variance = (second - mean * mean).max(VARIANCE_FLOOR);
        Ok((mean, variance))
    }

    /// Difference between the moments from `rule` and from a rule of twice
    /// the order. Used as a quadrature error estimate.
    pub fn quadrature_error(&self, rule: &QuadratureRule) -> Result<f64> {
        let finer = QuadratureRule::gauss_hermite((2 * rule.order()).min(200))?;
        let (m1, v1) = self.mean_and_variance(rule)?;
        let (m2, v2) = self.mean_and_variance(&finer)?;
        Ok((m1 - m2).abs().max((v1 - v2).abs()))
    }

    /// `f⁻¹(μ* + σ* Φ⁻¹(q))`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(GpError::InvalidInput(format!("quantile level must be in (0, 1), got {q}")));
        }
        if q == 0.5 {
            return self.median();
        }
        self.warp
            .inverse(self.latent.mean + self.latent.std_dev() * normal::quantile(q))
    }

    /// Minimum-risk estimate under the asymmetric linear loss with weight
    /// `w` on underestimates: the `w/(w+1)` quantile.
    pub fn bayes_estimate_al(&self, w: f64) -> Result<f64> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(GpError::InvalidInput(format!("AL weight must be positive, got {w}")));
        }
        self.quantile(w / (w + 1.0))
    }

    /// Minimum-risk estimate under the linex loss, `μ_y − w σ_y² / 2`, using
    /// the observed-space mean and variance. Exact for Gaussian predictives
    /// and a moment approximation otherwise.
    pub fn bayes_estimate_linex(&self, w: f64, rule: &QuadratureRule) -> Result<f64> {
        if !(w != 0.0 && w.is_finite()) {
            return Err(GpError::InvalidInput(format!("linex weight must be non-zero, got {w}")));
        }
        let (mean, variance) = self.mean_and_variance(rule)?;
        Ok(mean - 0.5 * w * variance)
    }
}
