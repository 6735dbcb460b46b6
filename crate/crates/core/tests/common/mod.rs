//! Independent numerical oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use warpgp::gp::{Dataset, Hyperparams};
use warpgp::kernels::{KernelFamily, KernelParams, KernelSpec, LengthscaleMode};
use warpgp::warping::{Warp, WarpParams, WarpSpec};

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

/// Sum of adaptive Simpson integrals over consecutive break points.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> f64 {
    breaks
        .windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], tol / breaks.len() as f64))
        .sum()
}

/// Root of an increasing function by plain bisection.
pub fn bisect<F: Fn(f64) -> f64>(f: F, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    while f(lo) > target {
        lo -= 2.0 * (hi - lo);
    }
    while f(hi) < target {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Kernel value written out directly from the closed forms.
pub fn kernel_closed_form(family: KernelFamily, variance: f64, lengthscales: &[f64], x: &[f64], x2: &[f64]) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(x2)
        .enumerate()
        .map(|(d, (a, b))| {
            let l = if lengthscales.len() == 1 { lengthscales[0] } else { lengthscales[d] };
            ((a - b) / l).powi(2)
        })
        .sum();
    let r = r2.sqrt();
    variance
        * match family {
            KernelFamily::Eq => (-0.5 * r2).exp(),
            KernelFamily::Matern32 => (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp(),
            KernelFamily::Matern52 => (1.0 + 5f64.sqrt() * r + 5.0 * r2 / 3.0) * (-(5f64.sqrt()) * r).exp(),
        }
}

pub const FAMILIES: [KernelFamily; 3] = [KernelFamily::Eq, KernelFamily::Matern32, KernelFamily::Matern52];

pub fn warp_specs() -> Vec<WarpSpec> {
    vec![
        WarpSpec::Identity,
        WarpSpec::Log,
        WarpSpec::TanhSum { terms: 1 },
        WarpSpec::TanhSum { terms: 2 },
        WarpSpec::TanhSum { terms: 3 },
    ]
}

/// Dataset with strictly positive responses, so every warp applies.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Dataset {
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.5..1.5));
    let y = DVector::from_fn(n, |i, _| {
        let s: f64 = (0..dim).map(|d| (1.3 * x[(i, d)] + d as f64).sin()).sum();
        (0.4 * s + 0.3 * rng.random_range(-1.0..1.0)).exp()
    });
    Dataset::new(x, y).unwrap()
}

pub fn random_hyperparams(rng: &mut ChaCha8Rng, kernel: &KernelSpec, warp: &WarpSpec, dim: usize) -> Hyperparams {
    let nl = match kernel.lengthscale_mode() {
        LengthscaleMode::Isotropic => 1,
        LengthscaleMode::Ard => dim,
    };
    let lengthscales = (0..nl).map(|_| rng.random_range(0.3..3.0)).collect();
    let kernel = KernelParams::new(rng.random_range(0.3..3.0), lengthscales);
    let warp = warp.has_params().then(|| random_warp_params(rng, warp.terms()));
    Hyperparams::new(kernel, rng.random_range(0.01..0.5), warp)
}

pub fn random_warp_params(rng: &mut ChaCha8Rng, terms: usize) -> WarpParams {
    WarpParams::new(
        (0..terms).map(|_| rng.random_range(0.2..2.0)).collect(),
        (0..terms).map(|_| rng.random_range(0.2..2.0)).collect(),
        (0..terms).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

pub fn random_tanh_warp(rng: &mut ChaCha8Rng) -> Warp {
    let terms = rng.random_range(1..=3);
    Warp::new(WarpSpec::TanhSum { terms }, random_warp_params(rng, terms)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
