//! Monotonic warping functions from observed responses to latent space.
//!
//! The parametric family is `f(y) = y + Σ_i a_i tanh(b_i (y + c_i))` with
//! `a_i, b_i > 0`, which keeps `f` strictly increasing and a bijection of ℝ.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum WarpSpec {
    Identity,
    Log,
    TanhSum { terms: usize },
}

impl WarpSpec {
    pub fn tanh(terms: usize) -> Result<Self> {
        if terms == 0 {
            return Err(GpError::InvalidInput("tanh warp needs at least one term".into()));
        }
        Ok(WarpSpec::TanhSum { terms })
    }

    /// Short name used on the command line and in reports.
    pub fn name(&self) -> String {
        match self {
            WarpSpec::Identity => "none".into(),
            WarpSpec::Log => "log".into(),
            WarpSpec::TanhSum { terms } => format!("tanh{terms}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "none" | "identity" => Ok(WarpSpec::Identity),
            "log" => Ok(WarpSpec::Log),
            _ => {
                let terms = s
                    .strip_prefix("tanh")
                    .map(|t| t.strip_prefix(':').unwrap_or(t))
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| GpError::InvalidInput(format!("unknown warp '{s}'")))?;
                WarpSpec::tanh(terms)
            }
        }
    }

    pub fn terms(&self) -> usize {
        match self {
            WarpSpec::TanhSum { terms } => *terms,
            _ => 0,
        }
    }

    /// Number of free warp parameters (`3I` for tanh sums).
    pub fn num_params(&self) -> usize {
        3 * self.terms()
    }

    pub fn has_params(&self) -> bool {
        self.num_params() > 0
    }
}

/// Tanh-sum parameters. Empty for identity and log warps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WarpParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl WarpParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Self {
        Self { a, b, c }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Near-identity random start: `a, b` log-uniform on `[e^-2, 1]`,
    /// `c ~ N(-mean, var)` so the tanh steps sit inside the response range.
    pub fn random_init<R: Rng + ?Sized>(spec: &WarpSpec, rng: &mut R, y_mean: f64, y_var: f64) -> Self {
        let terms = spec.terms();
        let sd = y_var.max(1e-12).sqrt();
        let normal = Normal::new(-y_mean, sd).expect("finite standard deviation");
        let mut p = WarpParams::default();
        for _ in 0..terms {
            p.a.push(rng.random_range(-2.0..0.0f64).exp());
            p.b.push(rng.random_range(-2.0..0.0f64).exp());
            p.c.push(normal.sample(rng));
        }
        p
    }

    /// Flattened as `[a.., b.., c..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).chain(&self.c).copied().collect()
    }

    pub fn from_slice(terms: usize, v: &[f64]) -> Self {
        Self {
            a: v[..terms].to_vec(),
            b: v[terms..2 * terms].to_vec(),
            c: v[2 * terms..3 * terms].to_vec(),
        }
    }
}

/// Partials of `f(y)` and `ln f'(y)` with respect to the flattened warp
/// parameters `[a.., b.., c..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGradients {
    pub value: Vec<f64>,
    pub log_deriv: Vec<f64>,
}

const INVERSE_MAX_ITERS: usize = 100;

/// A warping function together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warp {
    spec: WarpSpec,
    params: WarpParams,
}

impl Warp {
    pub fn new(spec: WarpSpec, params: WarpParams) -> Result<Self> {
        let terms = spec.terms();
        if params.a.len() != terms || params.b.len() != terms || params.c.len() != terms {
            return Err(GpError::InvalidInput(format!(
                "warp {} expects {terms} terms per parameter vector, got ({}, {}, {})",
                spec.name(),
                params.a.len(),
                params.b.len(),
                params.c.len()
            )));
        }
        if let WarpSpec::TanhSum { terms: 0 } = spec {
            return Err(GpError::InvalidInput("tanh warp needs at least one term".into()));
        }
        if params.a.iter().chain(&params.b).any(|v| !(*v > 0.0 && v.is_finite()))
            || params.c.iter().any(|v| !v.is_finite())
        {
            return Err(GpError::InvalidInput(format!(
                "tanh warp needs finite a, b > 0; got {params:?}"
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn identity() -> Self {
        Self {
            spec: WarpSpec::Identity,
            params: WarpParams::empty(),
        }
    }

    pub fn log() -> Self {
        Self {
            spec: WarpSpec::Log,
            params: WarpParams::empty(),
        }
    }

    /// Tanh-sum warp without the positivity check on `a` and `b`. Used to
    /// probe degenerate limits such as `a = 0`.
    #[cfg(test)]
    pub(crate) fn tanh_unchecked(params: WarpParams) -> Self {
        Self {
            spec: WarpSpec::TanhSum { terms: params.a.len() },
            params,
        }
    }

    pub fn spec(&self) -> &WarpSpec {
        &self.spec
    }

    pub fn params(&self) -> &WarpParams {
        &self.params
    }

    fn check_domain(&self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(GpError::Domain(format!("non-finite response {y}")));
        }
        if matches!(self.spec, WarpSpec::Log) && y <= 0.0 {
            return Err(GpError::Domain(format!("log warp needs y > 0, got {y}")));
        }
        Ok(())
    }

    /// Whether `y` lies in the support of the observed-space distribution.
    pub fn in_domain(&self, y: f64) -> bool {
        self.check_domain(y).is_ok()
    }

    pub fn warp(&self, y: f64) -> Result<f64> {
        self.check_domain(y)?;
        Ok(self.warp_unchecked(y))
    }

    fn warp_unchecked(&self, y: f64) -> f64 {
        match self.spec {
            WarpSpec::Identity => y,
            WarpSpec::Log => y.ln(),
            WarpSpec::TanhSum { .. } => {
                let p = &self.params;
                y + (0..p.a.len())
                    .map(|i| p.a[i] * (p.b[i] * (y + p.c[i])).tanh())
                    .sum::<f64>()
            }
        }
    }

    pub fn warp_deriv(&self, y: f64) -> Result<f64> {
        self.check_domain(y)?;
        Ok(self.deriv_unchecked(y))
    }

    fn deriv_unchecked(&self, y: f64) -> f64 {
        match self.spec {
            WarpSpec::Identity => 1.0,
            WarpSpec::Log => 1.0 / y,
            WarpSpec::TanhSum { .. } => {
                let p = &self.params;
                1.0 + (0..p.a.len())
                    .map(|i| p.a[i] * p.b[i] * sech2(p.b[i] * (y + p.c[i])))
                    .sum::<f64>()
            }
        }
    }

    /// Solves `f(y) = z`. Closed form for identity/log, safeguarded Newton
    /// inside a bracket for tanh sums.
    pub fn inverse(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(GpError::Domain(format!("cannot invert non-finite value {z}")));
        }
        match self.spec {
            WarpSpec::Identity => Ok(z),
            WarpSpec::Log => {
                let y = z.exp();
                if y.is_finite() && y > 0.0 {
                    Ok(y)
                } else {
                    Err(GpError::Domain(format!("exp({z}) is not representable")))
                }
            }
            WarpSpec::TanhSum { .. } => self.tanh_inverse(z),
        }
    }

    fn tanh_inverse(&self, z: f64) -> Result<f64> {
        let tol = 1e-10 * z.abs().max(1.0);
        // |f(y) - y| < Σ a_i, so the root lies in [z - Σa, z + Σa].
        let spread: f64 = self.params.a.iter().sum::<f64>() + 1.0;
        let mut lo = z - spread;
        let mut hi = z + spread;
        while self.warp_unchecked(lo) > z {
            lo -= hi - lo;
        }
        while self.warp_unchecked(hi) < z {
            hi += hi - lo;
        }
        let mut y = z.clamp(lo, hi);
        let mut best = (y, f64::INFINITY);
        // Newton steps that leave the bracket or fail to halve the previous
        // step fall back to bisection.
        let mut prev_step = hi - lo;
        for _ in 0..INVERSE_MAX_ITERS {
            let r = self.warp_unchecked(y) - z;
            if r.abs() < best.1 {
                best = (y, r.abs());
            }
            if r.abs() <= tol {
                // One more Newton step is nearly free and sharpens y when
                // `tol` is loose relative to the local slope.
                let polished = y - r / self.deriv_unchecked(y);
                if polished.is_finite() && (self.warp_unchecked(polished) - z).abs() <= r.abs() {
                    return Ok(polished);
                }
                return Ok(y);
            }
            if r > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let newton = y - r / self.deriv_unchecked(y);
            // On very steep warps the residual floor ulp(y)·f'(y) can exceed
            // `tol`; stop once y itself is resolved to a few ulps.
            let y_tol = 4.0 * f64::EPSILON * y.abs().max(1.0);
            if (newton - y).abs() <= y_tol || hi - lo <= y_tol {
                return Ok(best.0);
            }
            let next = if newton > lo && newton < hi && (newton - y).abs() <= 0.5 * prev_step {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if next == y {
                break;
            }
            prev_step = (next - y).abs();
            y = next;
        }
        if best.1 <= tol {
            return Ok(best.0);
        }
        Err(GpError::InverseNotConverged {
            iterations: INVERSE_MAX_ITERS,
            best: best.0,
            residual: best.1,
        })
    }

    /// Analytic partials of `f(y)` and `ln f'(y)` in natural parameter space.
    pub fn param_gradients(&self, y: f64) -> Result<WarpGradients> {
        self.check_domain(y)?;
        let p = &self.params;
        let terms = p.a.len();
        let mut value = vec![0.0; 3 * terms];
        let mut dderiv = vec![0.0; 3 * terms];
        for i in 0..terms {
            let (a, b, c) = (p.a[i], p.b[i], p.c[i]);
            let u = b * (y + c);
            let t = u.tanh();
            let s2 = sech2(u);
            // d(sech² u)/du = −2 sech² u tanh u
            let ds2 = -2.0 * s2 * t;
            value[i] = t;
            value[terms + i] = a * (y + c) * s2;
            value[2 * terms + i] = a * b * s2;
            dderiv[i] = b * s2;
            dderiv[terms + i] = a * s2 + a * b * ds2 * (y + c);
            dderiv[2 * terms + i] = a * b * b * ds2;
        }
        let fp = self.deriv_unchecked(y);
        let log_deriv = dderiv.into_iter().map(|d| d / fp).collect();
        Ok(WarpGradients { value, log_deriv })
    }
}

#[inline]
fn sech2(u: f64) -> f64 {
    let t = u.tanh();
    1.0 - t * t
}
