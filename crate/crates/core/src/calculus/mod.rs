//! Finite-level calculus on a [`GridLevel`]: grid functions, the pointwise
//! integral, the summation-by-parts derivative, and distributional pairing.

mod diffop;
pub mod galerkin;

use std::sync::Arc;

pub use diffop::DiffOp;

use crate::error::{usage, Error, Result};
use crate::grid::{GridLevel, NodeSet};
use crate::net::{classify, Classification, ClassifyOptions, Net};

/// One real value per node of a level.
#[derive(Clone, Debug)]
pub struct GridFunction {
    level: Arc<GridLevel>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(level: Arc<GridLevel>, values: Vec<f64>) -> Result<Self> {
        if values.len() != level.node_count() {
            return usage(format!(
                "{} values for a level with {} nodes",
                values.len(),
                level.node_count()
            ));
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Evaluation { node, coords: level.point(node), value });
        }
        Ok(GridFunction { level, values })
    }

    pub fn zeros(level: &Arc<GridLevel>) -> Self {
        GridFunction { level: level.clone(), values: vec![0.0; level.node_count()] }
    }

    pub fn constant(level: &Arc<GridLevel>, c: f64) -> Self {
        GridFunction { level: level.clone(), values: vec![c; level.node_count()] }
    }

    pub fn level(&self) -> &Arc<GridLevel> {
        &self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn from_parts(level: Arc<GridLevel>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), level.node_count());
        GridFunction { level, values }
    }

    pub(crate) fn check_same(&self, other: &GridFunction) -> Result<()> {
        if self.level.same_level(&other.level) {
            Ok(())
        } else {
            Err(Error::LevelMismatch(format!("{} vs {}", self.level.key(), other.level.key())))
        }
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &GridFunction, beta: f64) -> Result<GridFunction> {
        self.check_same(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        GridFunction::new(self.level.clone(), values)
    }

    pub fn scale(&self, alpha: f64) -> GridFunction {
        GridFunction::from_parts(self.level.clone(), self.values.iter().map(|v| alpha * v).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        GridFunction::new(self.level.clone(), self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Samples `f` at the nodes lying in `E` (given by `in_set`) and puts zero
/// elsewhere: the grid extension `f°`.
pub fn restrict_on<F, P>(f: F, in_set: P, level: &Arc<GridLevel>) -> Result<GridFunction>
where
    F: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> bool,
{
    let mut values = vec![0.0; level.node_count()];
    for (node, slot) in values.iter_mut().enumerate() {
        let x = level.point(node);
        if in_set(&x) {
            let v = f(&x);
            if !v.is_finite() {
                return Err(Error::Evaluation { node, coords: x, value: v });
            }
            *slot = v;
        }
    }
    Ok(GridFunction::from_parts(level.clone(), values))
}

/// [`restrict_on`] with `E` the whole domain.
pub fn restrict<F>(f: F, level: &Arc<GridLevel>) -> Result<GridFunction>
where
    F: Fn(&[f64]) -> f64,
{
    restrict_on(f, |_| true, level)
}

/// Pointwise integral `Σ u(a) d(a)`, optionally over a node subset.
pub fn integral(u: &GridFunction, over: Option<&NodeSet>) -> Result<f64> {
    let w = u.level.weights();
    match over {
        None => Ok(crate::par::sum_indexed(w.len(), |i| u.values[i] * w[i])),
        Some(set) => {
            if !set.belongs_to(&u.level) {
                return Err(Error::LevelMismatch(format!(
                    "node set of {} used with {}",
                    set.key(),
                    u.level.key()
                )));
            }
            Ok(set.indices().iter().map(|&i| u.values[i] * w[i]).sum())
        }
    }
}

/// Indicator of node `a`.
pub fn sigma(level: &Arc<GridLevel>, a: usize) -> Result<GridFunction> {
    if a >= level.node_count() {
        return usage(format!("node {a} out of range"));
    }
    let mut values = vec![0.0; level.node_count()];
    values[a] = 1.0;
    Ok(GridFunction::from_parts(level.clone(), values))
}

/// Weighted inner product `Σ u(a) v(a) d(a)`.
pub fn inner(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    u.check_same(v)?;
    let w = u.level.weights();
    Ok(crate::par::sum_indexed(w.len(), |i| u.values[i] * v.values[i] * w[i]))
}

pub fn norm(u: &GridFunction) -> f64 {
    inner(u, u).expect("same level").sqrt()
}

type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A smooth compactly supported function with its analytic gradient.
#[derive(Clone)]
pub struct TestFunction {
    value: ScalarField,
    gradient: VectorField,
    /// Bounding box of the support.
    support: (Vec<f64>, Vec<f64>),
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("support", &self.support).finish()
    }
}

impl TestFunction {
    pub fn new(value: ScalarField, gradient: VectorField, support: (Vec<f64>, Vec<f64>)) -> Self {
        TestFunction { value, gradient, support }
    }

    /// The standard bump `exp(1 - 1/(1 - |x-c|²/r²))` on the ball `B_r(c)`,
    /// normalised to 1 at the centre.
    pub fn bump(center: Vec<f64>, radius: f64) -> Self {
        let c1 = center.clone();
        let c2 = center.clone();
        let r2 = radius * radius;
        let value = move |x: &[f64]| {
            let s = x.iter().zip(&c1).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / r2;
            if s >= 1.0 {
                0.0
            } else {
                (1.0 - 1.0 / (1.0 - s)).exp()
            }
        };
        let gradient = move |x: &[f64]| {
            let s = x.iter().zip(&c2).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / r2;
            if s >= 1.0 {
                return vec![0.0; x.len()];
            }
            let t = 1.0 - s;
            let f = (1.0 - 1.0 / t).exp();
            // d/dx exp(1 - 1/(1-s)) = -f / t² · ds/dx
            x.iter().zip(&c2).map(|(a, b)| -f / (t * t) * 2.0 * (a - b) / r2).collect()
        };
        let lo = center.iter().map(|c| c - radius).collect();
        let hi = center.iter().map(|c| c + radius).collect();
        TestFunction::new(Arc::new(value), Arc::new(gradient), (lo, hi))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }

    pub fn support(&self) -> (&[f64], &[f64]) {
        (&self.support.0, &self.support.1)
    }

    /// True when the support box lies strictly inside the level's domain.
    pub fn supported_in(&self, level: &GridLevel) -> bool {
        let d = level.domain();
        (0..level.dim()).all(|a| self.support.0[a] > d.lower()[a] && self.support.1[a] < d.upper()[a])
    }
}

/// Per-level values `Σ u_n(a) φ(a) d(a)` of a pairing.
pub fn pairing_values(u_net: &Net<GridFunction>, phi: &TestFunction) -> Result<Net<f64>> {
    let mut out = Vec::with_capacity(u_net.len());
    for (n, h, u) in u_net.iter() {
        if !phi.supported_in(u.level()) {
            return usage("test function support must lie inside the domain");
        }
        let phi_n = restrict(|x| phi.value(x), u.level())?;
        out.push((n, h, inner(u, &phi_n)?));
    }
    Net::new(out)
}

/// Standard part of the pairing net `⟨u_n, φ⟩`.
pub fn pair_distribution(
    u_net: &Net<GridFunction>,
    phi: &TestFunction,
    opts: &ClassifyOptions,
) -> Result<Classification> {
    classify(&pairing_values(u_net, phi)?, opts)
}
