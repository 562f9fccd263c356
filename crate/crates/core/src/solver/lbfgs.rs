//! Limited-memory BFGS with backtracking Armijo search.
//!
//! The initial inverse Hessian is `γ·M⁻¹` with `M` the diagonal of quadrature
//! weights, which makes the first steps resolution independent. A feasibility
//! cap limits every trial step before backtracking starts.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖g‖_{M⁻¹} ≤ tol · (1 + |f|)`.
    pub tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { memory: 12, max_iter: 10_000, tol: 1e-8, armijo: 1e-4, max_backtracks: 60 }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Objective over the free variables.
pub trait Problem {
    /// Value and gradient, or `None` if `x` is outside the domain of `f`.
    fn eval(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>>;
    /// Largest step `α` such that `x + t·d` stays feasible for `t < α`.
    fn max_step(&self, _x: &[f64], _d: &[f64]) -> f64 {
        f64::INFINITY
    }
}

/// Relative slack on `f` allowed by the approximate Wolfe test.
const APPROX_EPS: f64 = 1e-12;
/// Consecutive accepted steps without decrease before giving up.
const MAX_STAGNANT: usize = 20;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted_norm(g: &[f64], m: &[f64]) -> f64 {
    g.iter().zip(m).map(|(x, w)| x * x / w).sum::<f64>().sqrt()
}

pub fn minimize<P: Problem>(problem: &P, x0: Vec<f64>, mass: &[f64], opts: &LbfgsOptions) -> Result<LbfgsOutcome> {
    let mut x = x0;
    let mut evaluations = 1;
    let Some((mut f, mut g)) = problem.eval(&x)? else {
        return Ok(LbfgsOutcome {
            x,
            f: f64::INFINITY,
            grad_norm: f64::INFINITY,
            iterations: 0,
            evaluations,
            converged: false,
        });
    };
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut gamma = 1.0;
    let mut iterations = 0;
    let mut gnorm = weighted_norm(&g, mass);
    let mut fresh_restart = false;
    let mut stagnant = 0;
    while iterations < opts.max_iter {
        if gnorm <= opts.tol * (1.0 + f.abs()) {
            return Ok(LbfgsOutcome { x, f, grad_norm: gnorm, iterations, evaluations, converged: true });
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        q.iter_mut().zip(mass).for_each(|(qi, m)| *qi *= gamma / m);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().zip(mass).map(|(gi, m)| -gi / m).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = 1.0f64;
        if hist.is_empty() {
            // first or restarted step: move at most unit size in the max norm
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > 0.0 {
                alpha = alpha.min(1.0 / dmax);
            }
        }
        let cap = problem.max_step(&x, &d);
        if cap.is_finite() {
            alpha = alpha.min(0.5 * cap);
        }
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            evaluations += 1;
            if let Some((ft, gt)) = problem.eval(&trial)? {
                if ft <= f + opts.armijo * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                // Near the optimum the decrease drowns in rounding of f; fall
                // back to the approximate Wolfe test on the directional
                // derivative.
                let st = dot(&gt, &d);
                if ft <= f + APPROX_EPS * f.abs() && st <= -0.8 * slope && st >= 0.9 * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((xn, fn_, gn)) => {
                let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    let yy: f64 = y.iter().zip(mass).map(|(v, m)| v * v / m).sum();
                    gamma = sy / yy;
                    hist.push_back((s, y, 1.0 / sy));
                    if hist.len() > opts.memory {
                        hist.pop_front();
                    }
                }
                stagnant = if fn_ < f { 0 } else { stagnant + 1 };
                x = xn;
                f = fn_;
                g = gn;
                gnorm = weighted_norm(&g, mass);
                fresh_restart = false;
                if stagnant >= MAX_STAGNANT {
                    break;
                }
            }
            None => {
                if fresh_restart || hist.is_empty() {
                    break;
                }
                hist.clear();
                fresh_restart = true;
            }
        }
    }
    let converged = gnorm <= opts.tol * (1.0 + f.abs());
    Ok(LbfgsOutcome { x, f, grad_norm: gnorm, iterations, evaluations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;
    impl Problem for Rosenbrock {
        fn eval(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok(Some((f, g)))
        }
    }

    #[test]
    fn rosenbrock() {
        let out = minimize(&Rosenbrock, vec![-1.2, 1.0], &[1.0, 1.0], &LbfgsOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    struct Barrier;
    impl Problem for Barrier {
        // (x - 3)² + 1/x², feasible for x > 0
        fn eval(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
            if x[0] <= 0.0 {
                return Ok(None);
            }
            let v = x[0];
            Ok(Some(((v - 3.0).powi(2) + v.powi(-2), vec![2.0 * (v - 3.0) - 2.0 * v.powi(-3)])))
        }
        fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
            if x[0] * d[0] < 0.0 {
                -x[0] / d[0]
            } else {
                f64::INFINITY
            }
        }
    }

    #[test]
    fn stays_feasible() {
        let out = minimize(&Barrier, vec![0.2], &[1.0], &LbfgsOptions::default()).unwrap();
        assert!(out.converged);
        assert!(out.x[0] > 0.0);
        let g = 2.0 * (out.x[0] - 3.0) - 2.0 * out.x[0].powi(-3);
        assert!(g.abs() < 1e-7);
    }
}
