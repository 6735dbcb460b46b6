//! Gauss-Hermite quadrature for expectations under a Gaussian.

use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

pub const DEFAULT_ORDER: usize = 50;

/// Nodes `t_j` and weights `w_j` with `∫ e^{-t²} g(t) dt ≈ Σ w_j g(t_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_ORDER).expect("default order is valid")
    }
}

impl QuadratureRule {
    /// Physicists' Gauss-Hermite rule. Roots are refined by Newton
    /// iteration on the orthonormal Hermite recurrence.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 || order > 200 {
            return Err(GpError::InvalidInput(format!(
                "quadrature order must be in 1..=200, got {order}"
            )));
        }
        const PI_M4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
        let n = order;
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (PI_M4, 0.0f64);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        // ascending order
        x.reverse();
        w.reverse();
        Ok(Self { nodes: x, weights: w })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[g(Z)]` for `Z ~ N(mean, sd²)`.
    pub fn expectation<F>(&self, mean: f64, sd: f64, mut g: F) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let scale = std::f64::consts::SQRT_2 * sd;
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(mean + scale * t)?;
        }
        Ok(acc / std::f64::consts::PI.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi_and_nodes_are_symmetric() {
        for order in [1, 2, 5, 20, 50, 100] {
            let r = QuadratureRule::gauss_hermite(order).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - std::f64::consts::PI.sqrt()).abs() < 1e-12, "order {order}: {s}");
            assert!(r.weights().iter().all(|w| *w > 0.0));
            for j in 0..order {
                assert!((r.nodes()[j] + r.nodes()[order - 1 - j]).abs() < 1e-12);
            }
            assert!(r.nodes().windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn known_low_order_rules() {
        let r = QuadratureRule::gauss_hermite(2).unwrap();
        assert!((r.nodes()[1] - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((r.weights()[0] - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-14);
        let r = QuadratureRule::gauss_hermite(3).unwrap();
        assert!((r.nodes()[2] - 1.5f64.sqrt()).abs() < 1e-14);
        assert!((r.weights()[1] - 2.0 * std::f64::consts::PI.sqrt() / 3.0).abs() < 1e-14);
    }

    #[test]
    fn exact_for_gaussian_moments() {
        let r = QuadratureRule::default();
        // E[Z^k] for Z ~ N(0.3, 1.7²), k ≤ 6
        let (m, s) = (0.3f64, 1.7f64);
        let raw = [
            1.0,
            m,
            m * m + s * s,
            m.powi(3) + 3.0 * m * s * s,
            m.powi(4) + 6.0 * m * m * s * s + 3.0 * s.powi(4),
        ];
        for (k, want) in raw.iter().enumerate() {
            let got = r.expectation(m, s, |z| Ok(z.powi(k as i32))).unwrap();
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "k={k}");
        }
        let e = r.expectation(0.2, 0.5, |z| Ok(z.exp())).unwrap();
        assert!((e - (0.2f64 + 0.125).exp()).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_order() {
        assert!(QuadratureRule::gauss_hermite(0).is_err());
        assert!(QuadratureRule::gauss_hermite(201).is_err());
    }
}
