//! The three application problems, plus two small reference problems used to
//! sanity-check the solver.

mod sawtooth;
mod singular;
mod sobolev;

use std::sync::Arc;

pub use sawtooth::{sawtooth_spec, sawtooth_start, SAWTOOTH_LOWER_BOUND};
pub use singular::{
    default_boundary_data, extract_interface, harmonic_start, midline_boundary_nodes, singular_spec,
    InterfaceDecomposition, InverseSquare, Potential,
};
pub use sobolev::{
    bubble, concentration_metric, critical_exponent, sign_perturbed_spec, talenti_constant,
    BubbleInitializer, DEFAULT_THETA,
};

use crate::calculus::galerkin::KuhnMesh;
use crate::error::Result;
use crate::grid::{Domain, GridLevel};
use crate::solver::{Boundary, Constraint, Feasibility, Functional, LevelFunctional, ProblemSpec, Sampler};

struct Quadratic {
    f: Sampler,
}

struct QuadraticLevel {
    target: Vec<f64>,
    weights: Vec<f64>,
}

impl Functional for Quadratic {
    fn at_level(&self, level: &Arc<GridLevel>) -> Result<Box<dyn LevelFunctional>> {
        let target = crate::calculus::restrict(|x| (self.f)(x), level)?.into_values();
        Ok(Box::new(QuadraticLevel { target, weights: level.weights().to_vec() }))
    }
}

impl LevelFunctional for QuadraticLevel {
    fn value_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut f = 0.0;
        let mut g = vec![0.0; u.len()];
        for i in 0..u.len() {
            let r = u[i] - self.target[i];
            f += r * r * self.weights[i];
            g[i] = 2.0 * r * self.weights[i];
        }
        Ok((f, g))
    }
}

/// `J(u) = ‖u - f°‖²` in the pointwise inner product, no boundary condition.
pub fn quadratic_spec(f: Sampler, domain: Domain) -> ProblemSpec {
    ProblemSpec {
        name: "quadratic".into(),
        domain,
        functional: Arc::new(Quadratic { f }),
        boundary: Boundary::Free,
        constraint: Constraint::None,
        feasibility: Feasibility::Any,
        lower_bound: Some(0.0),
        nested: false,
        initializer: None,
    }
}

struct Dirichlet;

struct DirichletLevel {
    mesh: KuhnMesh,
}

impl Functional for Dirichlet {
    fn at_level(&self, level: &Arc<GridLevel>) -> Result<Box<dyn LevelFunctional>> {
        Ok(Box::new(DirichletLevel { mesh: KuhnMesh::new(level) }))
    }
}

impl LevelFunctional for DirichletLevel {
    fn value_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.mesh.dirichlet_energy(u)
    }
}

/// `J(u) = ∫|∇u|²` with boundary data `g`.
pub fn dirichlet_spec(g: Sampler, domain: Domain) -> ProblemSpec {
    ProblemSpec {
        name: "dirichlet".into(),
        domain,
        functional: Arc::new(Dirichlet),
        boundary: Boundary::Dirichlet(g),
        constraint: Constraint::None,
        feasibility: Feasibility::Any,
        lower_bound: Some(0.0),
        nested: true,
        initializer: None,
    }
}
