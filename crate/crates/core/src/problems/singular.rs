//! Singular problem: minimize `E(u) = ∫(½|∇u|² + W(u))` over nowhere-zero
//! grid functions with sign-changing boundary data.
//!
//! The gradient term is the exact P1 energy; the potential term is the
//! pointwise integral `Σ W(u(a)) d(a)`, which is finite exactly when no nodal
//! value vanishes.

use std::sync::Arc;

use crate::calculus::galerkin::KuhnMesh;
use crate::calculus::GridFunction;
use crate::error::{usage, Result};
use crate::grid::{build_level, Domain, GridLevel, NodeSet};
use crate::measure::{perimeter, RegionDescriptor};
use crate::solver::{Boundary, Constraint, Feasibility, Functional, LevelFunctional, ProblemSpec, Sampler};

/// Singular potential with `W(t) → ∞` as `t → 0`.
pub trait Potential: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
}

/// `W(t) = t⁻²`.
#[derive(Clone, Copy, Debug, Default)]
pub struct InverseSquare;

impl Potential for InverseSquare {
    fn value(&self, t: f64) -> f64 {
        1.0 / (t * t)
    }

    fn derivative(&self, t: f64) -> f64 {
        -2.0 / (t * t * t)
    }
}

fn check_growth(w: &dyn Potential) -> Result<()> {
    for sign in [1.0, -1.0] {
        let near: Vec<f64> = (1..=12).map(|k| w.value(sign * 10f64.powi(-k))).collect();
        if near.windows(2).any(|p| !(p[1] > p[0])) || !(near[11] > 1e12) {
            return usage("W must blow up at 0");
        }
        let far: Vec<f64> = (1..=6).map(|k| {
            let t = sign * 10f64.powi(k);
            w.value(t) / (t * t)
        })
        .collect();
        if !(far[5].abs() < 1e-6) || far.windows(2).any(|p| p[1].abs() > p[0].abs()) {
            return usage("W(t)/t² must vanish as |t| grows");
        }
    }
    Ok(())
}

struct Singular {
    w: Arc<dyn Potential>,
    g: Sampler,
}

struct SingularLevel {
    mesh: KuhnMesh,
    weights: Vec<f64>,
    w: Arc<dyn Potential>,
}

fn check_boundary_data(g: &Sampler, level: &GridLevel) -> Result<()> {
    for a in 0..level.node_count() {
        if level.is_boundary(a) {
            let x = level.point(a);
            let v = g(&x);
            if !(v != 0.0 && v.is_finite()) {
                return usage(format!("boundary data vanishes at boundary node {a} at {x:?}"));
            }
        }
    }
    Ok(())
}

impl Functional for Singular {
    fn at_level(&self, level: &Arc<GridLevel>) -> Result<Box<dyn LevelFunctional>> {
        check_boundary_data(&self.g, level)?;
        Ok(Box::new(SingularLevel {
            mesh: KuhnMesh::new(level),
            weights: level.weights().to_vec(),
            w: self.w.clone(),
        }))
    }
}

impl LevelFunctional for SingularLevel {
    fn value_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        if u.iter().any(|&v| v == 0.0) {
            return Ok((f64::INFINITY, vec![0.0; u.len()]));
        }
        let (e, mut g) = self.mesh.dirichlet_energy(u)?;
        let mut value = 0.5 * e;
        for i in 0..u.len() {
            g[i] = 0.5 * g[i] + self.w.derivative(u[i]) * self.weights[i];
            value += self.w.value(u[i]) * self.weights[i];
        }
        Ok((value, g))
    }
}

/// `+1` on `x_0 ≤ mid`, `-1` beyond, where `mid` is the centre of axis 0.
pub fn default_boundary_data(domain: &Domain) -> Sampler {
    let mid = 0.5 * (domain.lower()[0] + domain.upper()[0]);
    Arc::new(move |x: &[f64]| if x[0] <= mid { 1.0 } else { -1.0 })
}

/// Boundary nodes lying exactly on the midline `x_0 = mid`, where the default
/// data picks `+1` by convention.
pub fn midline_boundary_nodes(level: &GridLevel) -> NodeSet {
    let d = level.domain();
    let mid = 0.5 * (d.lower()[0] + d.upper()[0]);
    NodeSet::from_predicate(level, |a| level.is_boundary(a) && level.coord(a, 0) == mid)
}

/// Jacobi-smoothed harmonic extension of the boundary data, with every value
/// pushed to at least `floor` in magnitude (zeros become `+floor`).
pub fn harmonic_start(g: &Sampler, level: &Arc<GridLevel>, floor: f64) -> Result<GridFunction> {
    check_boundary_data(g, level)?;
    let n = level.node_count();
    let dim = level.dim();
    let mut u: Vec<f64> = (0..n)
        .map(|a| if level.is_boundary(a) { g(&level.point(a)) } else { 0.0 })
        .collect();
    let mut next = u.clone();
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for a in 0..n {
            if level.is_boundary(a) {
                continue;
            }
            let s: f64 = (0..dim)
                .map(|k| u[a - level.strides()[k]] + u[a + level.strides()[k]])
                .sum();
            next[a] = s / (2 * dim) as f64;
            change = change.max((next[a] - u[a]).abs());
        }
        std::mem::swap(&mut u, &mut next);
        if change < 1e-10 {
            break;
        }
    }
    for v in u.iter_mut() {
        if v.abs() < floor {
            *v = if *v < 0.0 { -floor } else { floor };
        }
    }
    GridFunction::new(level.clone(), u)
}

/// Singular problem with potential `W` and boundary data `g` on `domain`.
pub fn singular_spec(w: Arc<dyn Potential>, g: Sampler, domain: Domain) -> Result<ProblemSpec> {
    check_growth(w.as_ref())?;
    check_boundary_data(&g, &*build_level(&domain, 3)?)?;
    let g_init = g.clone();
    Ok(ProblemSpec {
        name: "singular".into(),
        domain,
        functional: Arc::new(Singular { w, g: g.clone() }),
        boundary: Boundary::Dirichlet(g),
        constraint: Constraint::None,
        feasibility: Feasibility::NonZero { floor: 1e-12 },
        lower_bound: None,
        nested: false,
        initializer: Some(Arc::new(move |level: &Arc<GridLevel>| harmonic_start(&g_init, level, 0.1))),
    })
}

#[derive(Clone, Debug)]
pub struct InterfaceDecomposition {
    /// Nodes whose whole monad is positive.
    pub positive: NodeSet,
    /// Nodes whose whole monad is negative.
    pub negative: NodeSet,
    /// Everything else: nodes seeing both signs (or a zero) in their monad.
    pub mixed: NodeSet,
    /// Perimeter of the `{u > 0}` node mask.
    pub interface_measure: f64,
    /// Largest distance of a mixed node to the reference surface, if given.
    pub max_reference_distance: Option<f64>,
}

/// Splits the nodes of `u` by the sign pattern of their monads.
pub fn extract_interface(
    u: &GridFunction,
    reference_distance: Option<&dyn Fn(&[f64]) -> f64>,
) -> Result<InterfaceDecomposition> {
    let level = u.level();
    let n = level.node_count();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut mixed = Vec::new();
    for a in 0..n {
        let monad = level.neighborhood(a, 1);
        if monad.iter().all(|&b| u.get(b) > 0.0) {
            pos.push(a);
        } else if monad.iter().all(|&b| u.get(b) < 0.0) {
            neg.push(a);
        } else {
            mixed.push(a);
        }
    }
    let positive_mask = NodeSet::from_predicate(level, |a| u.get(a) > 0.0);
    let interface_measure = perimeter(&RegionDescriptor::Mask(positive_mask), level)?;
    let max_reference_distance = reference_distance
        .map(|d| mixed.iter().map(|&a| d(&level.point(a)).abs()).fold(0.0f64, f64::max));
    Ok(InterfaceDecomposition {
        positive: NodeSet::new(level, pos)?,
        negative: NodeSet::new(level, neg)?,
        mixed: NodeSet::new(level, mixed)?,
        interface_measure,
        max_reference_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::restrict;

    fn spec() -> ProblemSpec {
        let d = Domain::unit(2).unwrap();
        singular_spec(Arc::new(InverseSquare), default_boundary_data(&d), d).unwrap()
    }

    #[test]
    fn energy_of_one() {
        let s = spec();
        let g = build_level(&s.domain, 3).unwrap();
        let f = s.functional.at_level(&g).unwrap();
        assert!((f.value(&vec![1.0; g.node_count()]).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn energy_blows_up_towards_zero() {
        let s = spec();
        let g = build_level(&s.domain, 2).unwrap();
        let f = s.functional.at_level(&g).unwrap();
        let mut u = vec![1.0; g.node_count()];
        let mut last = f.value(&u).unwrap();
        for k in 1..8 {
            u[12] = 10f64.powi(-k);
            let v = f.value(&u).unwrap();
            assert!(v > last);
            last = v;
        }
        u[12] = 0.0;
        assert_eq!(f.value(&u).unwrap(), f64::INFINITY);
    }

    #[test]
    fn vanishing_data_is_rejected() {
        let d = Domain::unit(2).unwrap();
        let g: Sampler = Arc::new(|x: &[f64]| x[0] - 0.5);
        let err = singular_spec(Arc::new(InverseSquare), g, d).unwrap_err();
        assert!(err.to_string().contains("boundary node"), "{err}");
    }

    #[test]
    fn bad_potentials_are_rejected() {
        struct Quadratic;
        impl Potential for Quadratic {
            fn value(&self, t: f64) -> f64 {
                t * t + 1.0 / (t * t)
            }
            fn derivative(&self, t: f64) -> f64 {
                2.0 * t
            }
        }
        let d = Domain::unit(2).unwrap();
        assert!(singular_spec(Arc::new(Quadratic), default_boundary_data(&d), d).is_err());
    }

    #[test]
    fn start_is_admissible() {
        let s = spec();
        let g = build_level(&s.domain, 4).unwrap();
        let u = s.initial(&g).unwrap();
        s.check_admissible(&u).unwrap();
        assert!(u.values().iter().all(|v| v.abs() >= 0.1));
        assert_eq!(midline_boundary_nodes(&g).len(), 2);
    }

    #[test]
    fn interface_examples() {
        let g = build_level(&Domain::unit(1).unwrap(), 3).unwrap();
        let pos = restrict(|_| 1.0, &g).unwrap();
        let d = extract_interface(&pos, None).unwrap();
        assert_eq!(d.positive.len(), g.node_count());
        assert!(d.mixed.is_empty());
        let lin = restrict(|x| x[0] - 0.5, &g).unwrap();
        let d = extract_interface(&lin, Some(&|x: &[f64]| x[0] - 0.5)).unwrap();
        assert_eq!(d.mixed.indices(), &[3, 4, 5]);
        assert!(d.max_reference_distance.unwrap() <= g.h() + 1e-15);
    }
}
