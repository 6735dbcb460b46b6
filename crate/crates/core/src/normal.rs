//! Standard normal helpers.

use statrs::function::erf::{erfc, erfc_inv};

use crate::gp::LN_2PI;

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, `p` in (0, 1). The `erfc_inv` starting value
/// is polished with Halley steps on the CDF.
pub fn quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let pdf = (-0.5 * x * x - 0.5 * LN_2PI).exp();
        if !(pdf > 0.0 && x.is_finite()) {
            break;
        }
        let e = (cdf(x) - p) / pdf;
        x -= e / (1.0 + 0.5 * x * e);
    }
    x
}

pub fn log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}
