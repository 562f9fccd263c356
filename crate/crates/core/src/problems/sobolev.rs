//! The critical Sobolev quotient perturbed by a potential `a`:
//!
//! `Q(u) = (∫|∇u|² + ∫a u²) / (∫|u|^{2*})^{2/2*}`, `2* = 2N/(N-2)`,
//! with homogeneous Dirichlet data. All three integrals are exact on the P1
//! space of each level, so the level spaces are nested and `Q ≥ S_N` holds
//! at every level whenever `a ≥ 0`.

use std::sync::Arc;

use crate::calculus::galerkin::KuhnMesh;
use crate::calculus::{integral, restrict, GridFunction};
use crate::error::{usage, Result};
use crate::grid::{build_level, Domain, GridLevel, NodeSet};
use crate::solver::{Boundary, Constraint, Feasibility, Functional, LevelFunctional, ProblemSpec, Sampler};

/// Cutoff ratio between the outer and inner radius of the bubble.
pub const DEFAULT_THETA: f64 = 2.0;

/// `2N/(N-2)`, required to be an even integer so that `|u|^{2*} = u^{2*}` is
/// a polynomial on each simplex.
pub fn critical_exponent(dim: usize) -> Result<usize> {
    match dim {
        3 => Ok(6),
        4 => Ok(4),
        _ => usage(format!("the critical quotient is supported for N = 3 and N = 4, not {dim}")),
    }
}

fn gamma_half_integer(twice: usize) -> f64 {
    // Γ(twice / 2) for positive integers twice
    let pi = std::f64::consts::PI;
    if twice % 2 == 0 {
        (1..twice / 2).map(|k| k as f64).product()
    } else {
        let mut g = pi.sqrt();
        let mut x = 0.5;
        while (2.0 * x) as usize != twice {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Best constant `S_N = πN(N-2) (Γ(N/2)/Γ(N))^{2/N}` of `‖∇u‖² ≥ S_N ‖u‖²_{2*}`.
pub fn talenti_constant(dim: usize) -> f64 {
    let n = dim as f64;
    let ratio = gamma_half_integer(dim) / gamma_half_integer(2 * dim);
    std::f64::consts::PI * n * (n - 2.0) * ratio.powf(2.0 / n)
}

struct Quotient {
    a: Option<Sampler>,
    exponent: usize,
}

struct QuotientLevel {
    mesh: KuhnMesh,
    a: Option<Vec<f64>>,
    exponent: usize,
}

impl Functional for Quotient {
    fn at_level(&self, level: &Arc<GridLevel>) -> Result<Box<dyn LevelFunctional>> {
        let a = match &self.a {
            Some(f) => Some(restrict(|x| f(x), level)?.into_values()),
            None => None,
        };
        Ok(Box::new(QuotientLevel { mesh: KuhnMesh::new(level), a, exponent: self.exponent }))
    }
}

impl LevelFunctional for QuotientLevel {
    fn value_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (p_val, p_grad) = self.mesh.power_integral(u, self.exponent)?;
        if !(p_val > 0.0) {
            return Ok((f64::INFINITY, vec![0.0; u.len()]));
        }
        let (mut num, mut num_grad) = self.mesh.dirichlet_energy(u)?;
        if let Some(a) = &self.a {
            let (av, ag) = self.mesh.weighted_square(a, u)?;
            num += av;
            num_grad.iter_mut().zip(&ag).for_each(|(g, x)| *g += x);
        }
        let q = 2.0 / self.exponent as f64;
        let den = p_val.powf(q);
        let value = num / den;
        let c = value * q / p_val;
        let grad = num_grad.iter().zip(&p_grad).map(|(n, p)| n / den - c * p).collect();
        Ok((value, grad))
    }

    fn constraint_norm(&self, u: &[f64]) -> Result<Option<f64>> {
        let (p, _) = self.mesh.power_integral(u, self.exponent)?;
        Ok(Some(p.powf(1.0 / self.exponent as f64)))
    }
}

/// The radial bubble `u_{δ,ε}` built from `U(r) = (1 + r²)^{-(N-2)/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BubbleInitializer {
    pub epsilon: f64,
    pub delta: f64,
    pub theta: f64,
    pub center: Vec<f64>,
}

impl BubbleInitializer {
    fn profile(&self, dim: usize, r: f64) -> f64 {
        let e = self.epsilon;
        let s = r / e;
        e.powf((2.0 - dim as f64) / 2.0) * (1.0 + s * s).powf(-(dim as f64 - 2.0) / 2.0)
    }

    /// Radial value at distance `r` from the centre.
    pub fn radial(&self, dim: usize, r: f64) -> f64 {
        let outer = self.delta * self.theta;
        if r <= self.delta {
            self.profile(dim, r)
        } else if r <= outer {
            let ud = self.profile(dim, self.delta);
            let uo = self.profile(dim, outer);
            ud * (self.profile(dim, r) - uo) / (ud - uo)
        } else {
            0.0
        }
    }

    fn validate(&self, domain: &Domain) -> Result<()> {
        if !(self.epsilon > 0.0 && self.delta > 0.0 && self.theta > 1.0) {
            return usage("bubble needs ε > 0, δ > 0 and Θ > 1");
        }
        if self.center.len() != domain.dim() {
            return usage("bubble centre dimension mismatch");
        }
        let outer = self.delta * self.theta;
        for a in 0..domain.dim() {
            if self.center[a] - outer < domain.lower()[a] || self.center[a] + outer > domain.upper()[a] {
                return usage(format!("bubble support radius {outer} leaves the domain along axis {a}"));
            }
        }
        Ok(())
    }
}

pub fn bubble(init: &BubbleInitializer, level: &Arc<GridLevel>) -> Result<GridFunction> {
    init.validate(level.domain())?;
    let dim = level.dim();
    restrict(
        |x| {
            let r = x.iter().zip(&init.center).map(|(p, c)| (p - c).powi(2)).sum::<f64>().sqrt();
            init.radial(dim, r)
        },
        level,
    )
}

/// `∫_{B_r(x_m)} |u|^p / ∫|u|^p` as pointwise node-subset integrals.
pub fn concentration_metric(u: &GridFunction, x_m: &[f64], r: f64, exponent: f64) -> Result<f64> {
    if !(r > 0.0) {
        return usage("concentration radius must be positive");
    }
    let level = u.level();
    let powered = u.map(|v| v.abs().powf(exponent))?;
    let total = integral(&powered, None)?;
    if total == 0.0 {
        return usage("concentration of the zero function is undefined");
    }
    let ball = NodeSet::from_predicate(level, |a| {
        level.point(a).iter().zip(x_m).map(|(p, c)| (p - c).powi(2)).sum::<f64>() <= r * r
    });
    Ok(integral(&powered, Some(&ball))? / total)
}

/// Quotient problem with potential `a` (absent means `a ≡ 0`), started from
/// `start`. The Sobolev constant is attached as a lower bound when `a ≥ 0`
/// on a sampling grid of the domain.
pub fn sign_perturbed_spec(a: Option<Sampler>, domain: Domain, start: BubbleInitializer) -> Result<ProblemSpec> {
    let dim = domain.dim();
    let exponent = critical_exponent(dim)?;
    start.validate(&domain)?;
    let nonnegative = match &a {
        None => true,
        Some(f) => {
            let probe = build_level(&domain, if dim == 3 { 4 } else { 3 })?;
            (0..probe.node_count()).all(|i| f(&probe.point(i)) >= 0.0)
        }
    };
    let init = Arc::new(move |level: &Arc<GridLevel>| bubble(&start, level));
    Ok(ProblemSpec {
        name: "sign_perturbed".into(),
        domain,
        functional: Arc::new(Quotient { a, exponent }),
        boundary: Boundary::Dirichlet(Arc::new(|_| 0.0)),
        constraint: Constraint::UnitNorm { exponent: exponent as f64 },
        feasibility: Feasibility::Any,
        lower_bound: nonnegative.then(|| talenti_constant(dim)),
        nested: true,
        initializer: Some(init),
    })
}
