//! `J(u) = ∫u² + ∫((u')² - 1)²` on `(0, 1)`: infimum zero, never attained.

use std::sync::Arc;

use crate::calculus::galerkin::KuhnMesh;
use crate::calculus::GridFunction;
use crate::error::{usage, Result};
use crate::grid::{Domain, GridLevel};
use crate::solver::{Boundary, Constraint, Feasibility, Functional, LevelFunctional, ProblemSpec};

pub const SAWTOOTH_LOWER_BOUND: f64 = 0.0;

struct Sawtooth;

struct SawtoothLevel {
    mesh: KuhnMesh,
}

impl Functional for Sawtooth {
    fn at_level(&self, level: &Arc<GridLevel>) -> Result<Box<dyn LevelFunctional>> {
        if level.dim() != 1 {
            return usage("the sawtooth problem is one-dimensional");
        }
        Ok(Box::new(SawtoothLevel { mesh: KuhnMesh::new(level) }))
    }
}

impl LevelFunctional for SawtoothLevel {
    fn value_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.mesh.assemble(u, |s, g| {
            let (a, b, h) = (s.values[0], s.values[1], s.h);
            let d = (b - a) / h;
            let bend = d * d - 1.0;
            g[0] += h / 3.0 * (2.0 * a + b) - 4.0 * d * bend;
            g[1] += h / 3.0 * (a + 2.0 * b) + 4.0 * d * bend;
            h / 3.0 * (a * a + a * b + b * b) + h * bend * bend
        })
    }
}

/// Zigzag with slopes `±1` oscillating between `±h/2`.
pub fn sawtooth_start(level: &Arc<GridLevel>) -> Result<GridFunction> {
    let h = level.h();
    let vals = (0..level.node_count())
        .map(|i| if i % 2 == 0 { -0.5 * h } else { 0.5 * h })
        .collect();
    GridFunction::new(level.clone(), vals)
}

pub fn sawtooth_spec() -> ProblemSpec {
    ProblemSpec {
        name: "sawtooth".into(),
        domain: Domain::unit(1).expect("unit interval"),
        functional: Arc::new(Sawtooth),
        boundary: Boundary::Free,
        constraint: Constraint::None,
        feasibility: Feasibility::Any,
        lower_bound: Some(SAWTOOTH_LOWER_BOUND),
        nested: true,
        initializer: Some(Arc::new(sawtooth_start)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_level;

    #[test]
    fn zero_costs_one() {
        let spec = sawtooth_spec();
        let g = build_level(&spec.domain, 3).unwrap();
        let f = spec.functional.at_level(&g).unwrap();
        assert!((f.value(&vec![0.0; g.node_count()]).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zigzag_value() {
        let spec = sawtooth_spec();
        for n in 2..6 {
            let g = build_level(&spec.domain, n).unwrap();
            let f = spec.functional.at_level(&g).unwrap();
            let v = f.value(sawtooth_start(&g).unwrap().values()).unwrap();
            // ∫u² of a zigzag between ±h/2 is h²/12; the slope term vanishes
            assert!((v - g.h() * g.h() / 12.0).abs() < 1e-15, "{v}");
            assert!(v <= g.h() * g.h() / 3.0);
        }
    }
}
