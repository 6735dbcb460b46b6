//! Limited-memory BFGS with a strong-Wolfe line search
//! (bracketing phase followed by cubic-interpolation zoom).
//!
//! The objective returns `None` where it cannot be evaluated (for example an
//! ill-conditioned covariance); the line search treats such points as `+∞`
//! and shrinks the step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    /// Function decrease stalled while the gradient was still large.
    Stalled,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub memory: usize,
    /// Largest change of any coordinate on the first trial step.
    pub max_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            grad_tol: 1e-5,
            f_tol: 1e-9,
            memory: 10,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective value after every accepted step, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

impl LbfgsResult {
    pub fn grad_inf_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const STALL_GRAD: f64 = 1e-4;

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

struct Objective<'a, F> {
    f: &'a mut F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Objective<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evals += 1;
        (self.f)(x).filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
    }

    fn probe(&mut self, x: &[f64], d: &[f64], alpha: f64) -> Point {
        let trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        match self.eval(&trial) {
            Some((f, g)) => {
                let dg = dot(&g, d);
                Point { alpha, f, g, dg }
            }
            None => Point {
                alpha,
                f: f64::INFINITY,
                g: Vec::new(),
                dg: f64::NAN,
            },
        }
    }
}

/// Minimiser of the cubic through two points with slopes, or `None` when
/// the interpolant is not usable.
fn cubic_min(a: &Point, b: &Point) -> Option<f64> {
    if !(a.f.is_finite() && b.f.is_finite() && a.dg.is_finite() && b.dg.is_finite()) {
        return None;
    }
    let d1 = a.dg + b.dg - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dg * b.dg;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.dg + d2 - d1) / (b.dg - a.dg + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Strong-Wolfe line search along `d` from `x`. Returns the accepted point.
fn line_search<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>>(
    obj: &mut Objective<'_, F>,
    x: &[f64],
    f0: f64,
    dg0: f64,
    d: &[f64],
    alpha0: f64,
) -> Option<Point> {
    const MAX_EVALS: usize = 40;
    let origin = Point {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dg: dg0,
    };
    let mut prev = origin;
    let mut alpha = alpha0;
    for i in 0..MAX_EVALS {
        let cur = obj.probe(x, d, alpha);
        if !cur.f.is_finite() || cur.f > f0 + C1 * alpha * dg0 || (i > 0 && cur.f >= prev.f) {
            return zoom(obj, x, f0, dg0, d, prev, cur);
        }
        if cur.dg.abs() <= -C2 * dg0 {
            return Some(cur);
        }
        if cur.dg >= 0.0 {
            return zoom(obj, x, f0, dg0, d, cur, prev);
        }
        alpha *= 2.0;
        prev = cur;
    }
    None
}

fn zoom<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>>(
    obj: &mut Objective<'_, F>,
    x: &[f64],
    f0: f64,
    dg0: f64,
    d: &[f64],
    mut lo: Point,
    mut hi: Point,
) -> Option<Point> {
    const MAX_ZOOM: usize = 40;
    for _ in 0..MAX_ZOOM {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= 1e-16 * b.abs().max(1e-300) {
            break;
        }
        // Interpolate, but stay away from the interval ends.
        let alpha = match cubic_min(&lo, &hi) {
            Some(t) if t > a + 0.1 * width && t < b - 0.1 * width => t,
            _ => 0.5 * (a + b),
        };
        let cur = obj.probe(x, d, alpha);
        if !cur.f.is_finite() || cur.f > f0 + C1 * alpha * dg0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dg.abs() <= -C2 * dg0 {
                return Some(cur);
            }
            if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Minimises `f` from `x0`. Returns `None` if `f(x0)` cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut obj = Objective { f: &mut f, evals: 0 };
    let (mut fx, mut g) = obj.eval(x0)?;
    let mut x = x0.to_vec();
    let mut trace = vec![fx];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&g) < opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }

        let mut d = two_loop(&g, &history);
        let mut dg0 = dot(&g, &d);
        if !(dg0 < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            dg0 = dot(&g, &d);
        }
        let step_cap = opts.max_step / inf_norm(&d);
        let alpha0 = if history.is_empty() { step_cap.min(1.0) } else { 1.0f64.min(step_cap) };

        let accepted = match line_search(&mut obj, &x, fx, dg0, &d, alpha0) {
            Some(p) => Some((p, d)),
            None if !history.is_empty() => {
                // Retry once along steepest descent with fresh memory.
                history.clear();
                let d: Vec<f64> = g.iter().map(|v| -v).collect();
                let dg0 = dot(&g, &d);
                let alpha0 = (opts.max_step / inf_norm(&d)).min(1.0);
                line_search(&mut obj, &x, fx, dg0, &d, alpha0).map(|p| (p, d))
            }
            None => None,
        };
        let Some((p, d)) = accepted else {
            break if inf_norm(&g) < STALL_GRAD {
                Termination::FunctionTolerance
            } else {
                Termination::LineSearchFailed
            };
        };

        iterations += 1;
        let s: Vec<f64> = d.iter().map(|di| p.alpha * di).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let decrease = fx - p.f;
        let scale = fx.abs().max(p.f.abs()).max(1.0);
        fx = p.f;
        g = p.g;
        trace.push(fx);

        if decrease <= opts.f_tol * scale {
            break if inf_norm(&g) < opts.grad_tol {
                Termination::GradientTolerance
            } else if inf_norm(&g) < STALL_GRAD {
                Termination::FunctionTolerance
            } else {
                Termination::Stalled
            };
        }
    };

    Some(LbfgsResult {
        x,
        f: fx,
        grad: g,
        iterations,
        evaluations: obj.evals,
        termination,
        trace,
    })
}

/// Two-loop recursion: returns `-H g` for the current inverse-Hessian estimate.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn solves_ill_scaled_quadratic() {
        let scales = [1.0, 10.0, 100.0, 1000.0];
        let f = |x: &[f64]| {
            let v = x.iter().zip(scales).map(|(xi, s)| 0.5 * s * (xi - 1.0).powi(2)).sum();
            let g = x.iter().zip(scales).map(|(xi, s)| s * (xi - 1.0)).collect();
            Some((v, g))
        };
        let r = minimize(f, &[0.0; 4], &LbfgsOptions::default()).unwrap();
        assert!(r.grad_inf_norm() < 1e-5);
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn backs_off_from_undefined_region() {
        // Defined only for x > 0; minimum at x = 1.
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                None
            } else {
                Some((x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]]))
            }
        };
        let opts = LbfgsOptions {
            max_step: 50.0,
            ..Default::default()
        };
        let r = minimize(f, &[30.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5);
        assert!(minimize(f, &[-1.0], &opts).is_none());
    }

    #[test]
    fn respects_iteration_cap() {
        let opts = LbfgsOptions {
            max_iters: 3,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(r.termination, Termination::MaxIterations);
        assert_eq!(r.iterations, 3);
    }
}
