//! Dyadically nested tensor-product grids.
//!
//! A [`GridLevel`] is one member of the chain `Γ_0 ⊂ Γ_1 ⊂ ...` over an
//! axis-aligned box. Level `n` has uniform spacing `h_n = h_0 2^{-n}`,
//! composite-trapezoid quadrature weights and a boundary tag per node.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 4;

/// Default node budget for a single level.
pub const DEFAULT_NODE_CAP: usize = 20_000_000;

pub type MultiIndex = [usize; MAX_DIM];

/// Optional interior region carried by a domain, used to build masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interior {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

/// An axis-aligned box `∏ [lower_i, upper_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interior: Option<Interior>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() > MAX_DIM {
            return usage(format!("dimension must be in 1..={MAX_DIM}, got {}", lower.len()));
        }
        if lower.len() != upper.len() {
            return usage("lower and upper bounds differ in length");
        }
        for (a, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                return usage(format!("axis {a}: bounds [{lo}, {hi}] are not a finite positive interval"));
            }
        }
        let d = Domain { lower, upper, interior: None };
        d.base_cells()?;
        Ok(d)
    }

    /// The unit cube `[0,1]^dim`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn with_interior(mut self, interior: Interior) -> Result<Self> {
        let (lo, hi) = match &interior {
            Interior::Box { lower, upper } => (lower.clone(), upper.clone()),
            Interior::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        };
        if lo.len() != self.dim() || hi.len() != self.dim() {
            return usage("interior region dimension differs from the domain");
        }
        for a in 0..self.dim() {
            if lo[a] < self.lower[a] || hi[a] > self.upper[a] || hi[a] <= lo[a] {
                return usage(format!("interior region leaves the domain on axis {a}"));
            }
        }
        self.interior = Some(interior);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn interior(&self) -> Option<&Interior> {
        self.interior.as_ref()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.extent(a)).product()
    }

    /// Level-0 spacing: the shortest extent.
    pub fn base_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.extent(a)).fold(f64::INFINITY, f64::min)
    }

    /// Cells per axis at level 0. Every extent must be an integer multiple of
    /// the shortest one so that the lattice is uniform.
    pub fn base_cells(&self) -> Result<Vec<usize>> {
        let h0 = self.base_spacing();
        (0..self.dim())
            .map(|a| {
                let r = self.extent(a) / h0;
                let k = r.round();
                if (r - k).abs() > 1e-9 * r {
                    usage(format!("extent of axis {a} is not an integer multiple of {h0}"))
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

/// Identifies a level independent of the allocation holding it.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelKey {
    pub level: u32,
    pub shape: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl fmt::Display for LevelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "level {} shape {:?}", self.level, self.shape)
    }
}

/// One finite grid of the nested chain.
#[derive(Debug)]
pub struct GridLevel {
    level: u32,
    domain: Domain,
    h: f64,
    shape: Vec<usize>,
    strides: Vec<usize>,
    weights: Vec<f64>,
    boundary: Vec<bool>,
}

impl GridLevel {
    /// Builds level `n` of `domain` with the default node cap.
    pub fn build(domain: &Domain, n: u32) -> Result<Arc<Self>> {
        Self::build_with_cap(domain, n, DEFAULT_NODE_CAP)
    }

    pub fn build_with_cap(domain: &Domain, n: u32, cap: usize) -> Result<Arc<Self>> {
        if n > 30 {
            return Err(Error::Resource { level: n, nodes: usize::MAX, cap });
        }
        let base = domain.base_cells()?;
        let refine = 1usize << n;
        let shape: Vec<usize> = base.iter().map(|c| c * refine + 1).collect();
        let nodes = shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .unwrap_or(usize::MAX);
        if nodes > cap {
            return Err(Error::Resource { level: n, nodes, cap });
        }
        let dim = domain.dim();
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let h = domain.base_spacing() / refine as f64;
        let mut grid = GridLevel {
            level: n,
            domain: domain.clone(),
            h,
            shape,
            strides,
            weights: Vec::new(),
            boundary: Vec::new(),
        };
        let mut weights = vec![0.0; nodes];
        let mut boundary = vec![false; nodes];
        for node in 0..nodes {
            let idx = grid.multi_index(node);
            let mut w = 1.0;
            let mut on_face = false;
            for a in 0..dim {
                let edge = idx[a] == 0 || idx[a] + 1 == grid.shape[a];
                on_face |= edge;
                w *= if edge { 0.5 * h } else { h };
            }
            weights[node] = w;
            boundary[node] = on_face;
        }
        grid.weights = weights;
        grid.boundary = boundary;
        Ok(Arc::new(grid))
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Nodes per axis.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, node: usize) -> f64 {
        self.weights[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn key(&self) -> LevelKey {
        LevelKey {
            level: self.level,
            shape: self.shape.clone(),
            lower: self.domain.lower.clone(),
            upper: self.domain.upper.clone(),
        }
    }

    pub fn same_level(&self, other: &GridLevel) -> bool {
        std::ptr::eq(self, other)
            || (self.level == other.level && self.shape == other.shape && self.domain == other.domain)
    }

    pub fn multi_index(&self, mut node: usize) -> MultiIndex {
        let mut idx = [0usize; MAX_DIM];
        for a in 0..self.dim() {
            idx[a] = node / self.strides[a];
            node %= self.strides[a];
        }
        idx
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        let i = (node / self.strides[axis]) % self.shape[axis];
        self.domain.lower[axis] + i as f64 * self.h
    }

    pub fn point(&self, node: usize) -> Vec<f64> {
        let idx = self.multi_index(node);
        (0..self.dim())
            .map(|a| self.domain.lower[a] + idx[a] as f64 * self.h)
            .collect()
    }

    /// Nearest lattice node to `x`, clamped into the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut node = 0;
        for a in 0..self.dim() {
            let t = ((x[a] - self.domain.lower[a]) / self.h).round();
            let i = t.clamp(0.0, (self.shape[a] - 1) as f64) as usize;
            node += i * self.strides[a];
        }
        node
    }

    /// Index of this level's node `node` inside the finer level `fine`.
    pub fn embed(&self, node: usize, fine: &GridLevel) -> Result<usize> {
        if fine.level < self.level || fine.domain != self.domain {
            return Err(Error::LevelMismatch(format!(
                "cannot embed {} into {}",
                self.key(),
                fine.key()
            )));
        }
        let factor = 1usize << (fine.level - self.level);
        let idx = self.multi_index(node);
        Ok((0..self.dim()).map(|a| idx[a] * factor * fine.strides[a]).sum())
    }

    /// Nodes whose multi-index lies within Chebyshev distance `radius`.
    pub fn neighborhood(&self, node: usize, radius: usize) -> Vec<usize> {
        let idx = self.multi_index(node);
        let dim = self.dim();
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        for a in 0..dim {
            lo[a] = idx[a].saturating_sub(radius);
            hi[a] = (idx[a] + radius).min(self.shape[a] - 1);
        }
        let mut out = Vec::new();
        let mut cur = lo;
        loop {
            out.push(self.node_at(&cur[..dim]));
            let mut a = dim;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if cur[a] < hi[a] {
                    cur[a] += 1;
                    break;
                }
                cur[a] = lo[a];
            }
        }
    }
}

/// A set of node indices of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    key: LevelKey,
    indices: Vec<usize>,
}

impl NodeSet {
    pub fn new(level: &GridLevel, mut indices: Vec<usize>) -> Result<Self> {
        let n = level.node_count();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return usage(format!("node {bad} out of range for {}", level.key()));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(NodeSet { key: level.key(), indices })
    }

    pub fn empty(level: &GridLevel) -> Self {
        NodeSet { key: level.key(), indices: Vec::new() }
    }

    pub fn all(level: &GridLevel) -> Self {
        NodeSet { key: level.key(), indices: (0..level.node_count()).collect() }
    }

    pub fn from_predicate(level: &GridLevel, pred: impl Fn(usize) -> bool) -> Self {
        NodeSet {
            key: level.key(),
            indices: (0..level.node_count()).filter(|&i| pred(i)).collect(),
        }
    }

    pub fn key(&self) -> &LevelKey {
        &self.key
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.indices.binary_search(&node).is_ok()
    }

    pub fn belongs_to(&self, level: &GridLevel) -> bool {
        self.key == level.key()
    }

    /// Membership flags indexed by node.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.key.shape.iter().product()];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }
}

/// Builds level `n` of `domain` (default node cap).
pub fn build_level(domain: &Domain, n: u32) -> Result<Arc<GridLevel>> {
    GridLevel::build(domain, n)
}

/// Nodes on the faces of the box.
pub fn boundary_nodes(level: &GridLevel) -> NodeSet {
    NodeSet::from_predicate(level, |i| level.is_boundary(i))
}

/// Stencil neighbourhood of radius one cell per axis: the finite-level monad.
pub fn monad_neighbors(level: &GridLevel, node: usize) -> Result<NodeSet> {
    if node >= level.node_count() {
        return usage(format!("node {node} out of range"));
    }
    NodeSet::new(level, level.neighborhood(node, 1))
}
