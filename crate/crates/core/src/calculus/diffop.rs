use std::sync::Arc;

use super::GridFunction;
use crate::error::{usage, Error, Result};
use crate::grid::GridLevel;
use crate::par;

/// Per-axis summation-by-parts first derivative.
///
/// Interior rows are the central difference `(u[i+1] - u[i-1]) / 2h`; the two
/// boundary rows of each grid line are one-sided first order. Against the
/// trapezoid weights `H` this gives `H D + (H D)^T = B` with `B` supported on
/// boundary nodes only, so `⟨D u, v⟩ + ⟨u, D v⟩ = 0` whenever `v` vanishes on
/// the boundary.
#[derive(Clone, Debug)]
pub struct DiffOp {
    level: Arc<GridLevel>,
}

impl DiffOp {
    pub fn new(level: &Arc<GridLevel>) -> Self {
        DiffOp { level: level.clone() }
    }

    pub fn level(&self) -> &Arc<GridLevel> {
        &self.level
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.level.dim() {
            return usage(format!("axis {axis} out of range for dimension {}", self.level.dim()));
        }
        Ok(())
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if self.level.same_level(u.level()) {
            Ok(())
        } else {
            Err(Error::LevelMismatch(format!(
                "operator on {} applied to {}",
                self.level.key(),
                u.level().key()
            )))
        }
    }

    /// Nonzero entries `(column, coefficient)` of row `node` of `D_axis`.
    pub fn row(&self, axis: usize, node: usize) -> Vec<(usize, f64)> {
        let g = &*self.level;
        let s = g.strides()[axis];
        let n = g.shape()[axis];
        let i = (node / s) % n;
        let h = g.h();
        if i == 0 {
            vec![(node, -1.0 / h), (node + s, 1.0 / h)]
        } else if i + 1 == n {
            vec![(node - s, -1.0 / h), (node, 1.0 / h)]
        } else {
            vec![(node - s, -0.5 / h), (node + s, 0.5 / h)]
        }
    }

    /// `out = D_axis u` on raw node arrays.
    pub fn apply(&self, axis: usize, u: &[f64], out: &mut [f64]) {
        let g = &*self.level;
        let s = g.strides()[axis];
        let n = g.shape()[axis];
        let h = g.h();
        par::fill_indexed(out, |node| {
            let i = (node / s) % n;
            if i == 0 {
                (u[node + s] - u[node]) / h
            } else if i + 1 == n {
                (u[node] - u[node - s]) / h
            } else {
                (u[node + s] - u[node - s]) / (2.0 * h)
            }
        });
    }

    /// `uᵀ B_axis v`, the right-hand side of `⟨D u, v⟩ + ⟨u, D v⟩ = uᵀ B v`.
    pub fn boundary_form(&self, axis: usize, u: &[f64], v: &[f64]) -> f64 {
        let g = &*self.level;
        let s = g.strides()[axis];
        let n = g.shape()[axis];
        let h = g.h();
        let w = g.weights();
        par::sum_indexed(g.node_count(), |node| {
            let i = (node / s) % n;
            let t = 2.0 * w[node] / h;
            if i == 0 {
                -t * u[node] * v[node]
            } else if i + 1 == n {
                t * u[node] * v[node]
            } else {
                0.0
            }
        })
    }

    /// `out = D_axis^T w` (plain transpose, no weights).
    pub fn apply_transpose(&self, axis: usize, w: &[f64], out: &mut [f64]) {
        let g = &*self.level;
        let s = g.strides()[axis];
        let n = g.shape()[axis];
        let h = g.h();
        par::fill_indexed(out, |node| {
            let i = (node / s) % n;
            // column `node` collects from rows node-s, node, node+s
            let mut acc = 0.0;
            if i == 0 {
                acc -= w[node] / h;
                if n > 2 {
                    acc -= w[node + s] * 0.5 / h;
                } else {
                    acc -= w[node + s] / h;
                }
            } else if i + 1 == n {
                acc += w[node] / h;
                if n > 2 {
                    acc += w[node - s] * 0.5 / h;
                } else {
                    acc += w[node - s] / h;
                }
            } else {
                // row node-s
                acc += if i == 1 { w[node - s] / h } else { w[node - s] * 0.5 / h };
                // row node+s
                acc -= if i + 2 == n { w[node + s] / h } else { w[node + s] * 0.5 / h };
            }
            acc
        });
    }

    pub fn derivative(&self, axis: usize, u: &GridFunction) -> Result<GridFunction> {
        self.check_axis(axis)?;
        self.check(u)?;
        let mut out = vec![0.0; u.values().len()];
        self.apply(axis, u.values(), &mut out);
        Ok(GridFunction::from_parts(self.level.clone(), out))
    }

    pub fn gradient(&self, u: &GridFunction) -> Result<Vec<GridFunction>> {
        (0..self.level.dim()).map(|a| self.derivative(a, u)).collect()
    }

    pub fn divergence(&self, phi: &[GridFunction]) -> Result<GridFunction> {
        if phi.len() != self.level.dim() {
            return usage(format!("{} components for dimension {}", phi.len(), self.level.dim()));
        }
        let mut acc = vec![0.0; self.level.node_count()];
        let mut tmp = vec![0.0; acc.len()];
        for (a, p) in phi.iter().enumerate() {
            self.check(p)?;
            self.apply(a, p.values(), &mut tmp);
            acc.iter_mut().zip(&tmp).for_each(|(s, t)| *s += t);
        }
        Ok(GridFunction::from_parts(self.level.clone(), acc))
    }

    /// Weak Laplacian `-H⁻¹ Σ_i D_iᵀ H D_i u`, so that
    /// `⟨Δu, v⟩ = -Σ_i ⟨D_i u, D_i v⟩` for every `v`.
    pub fn laplacian(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check(u)?;
        let w = self.level.weights();
        let n = w.len();
        let mut acc = vec![0.0; n];
        let mut du = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for a in 0..self.level.dim() {
            self.apply(a, u.values(), &mut du);
            du.iter_mut().zip(w).for_each(|(d, wi)| *d *= wi);
            self.apply_transpose(a, &du, &mut tmp);
            acc.iter_mut().zip(&tmp).for_each(|(s, t)| *s -= t);
        }
        acc.iter_mut().zip(w).for_each(|(s, wi)| *s /= wi);
        Ok(GridFunction::from_parts(self.level.clone(), acc))
    }

    /// Dimension of `{u : D_i u = 0 for all i}`, computed by Gaussian
    /// elimination on the stacked dense operator. Limited to small levels.
    pub fn kernel_dimension(&self) -> Result<usize> {
        let n = self.level.node_count();
        if n > 2048 {
            return usage(format!("kernel dimension limited to 2048 nodes, level has {n}"));
        }
        let dim = self.level.dim();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n * dim);
        for a in 0..dim {
            for node in 0..n {
                let mut r = vec![0.0; n];
                for (c, v) in self.row(a, node) {
                    r[c] += v * self.level.h();
                }
                rows.push(r);
            }
        }
        Ok(n - rank(&mut rows, 1e-10))
    }
}

fn rank(rows: &mut [Vec<f64>], tol: f64) -> usize {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..ncols {
        let pivot = (r..rows.len()).max_by(|&a, &b| rows[a][c].abs().total_cmp(&rows[b][c].abs()));
        let Some(p) = pivot else { break };
        if rows[p][c].abs() <= tol {
            continue;
        }
        rows.swap(r, p);
        let (head, tail) = rows.split_at_mut(r + 1);
        let prow = &head[r];
        for row in tail.iter_mut() {
            let f = row[c] / prow[c];
            if f != 0.0 {
                for k in c..ncols {
                    row[k] -= f * prow[k];
                }
            }
        }
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{inner, restrict};
    use crate::grid::{build_level, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn level(dim: usize, n: u32) -> Arc<GridLevel> {
        build_level(&Domain::unit(dim).unwrap(), n).unwrap()
    }

    #[test]
    fn transpose_matches_rows() {
        for dim in 1..=2 {
            let g = level(dim, 2);
            let op = DiffOp::new(&g);
            let n = g.node_count();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for a in 0..dim {
                let mut fast = vec![0.0; n];
                op.apply_transpose(a, &w, &mut fast);
                let mut slow = vec![0.0; n];
                for r in 0..n {
                    for (c, v) in op.row(a, r) {
                        slow[c] += v * w[r];
                    }
                }
                for (x, y) in fast.iter().zip(&slow) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let g = level(2, 3);
        let op = DiffOp::new(&g);
        let c = GridFunction::constant(&g, 3.5);
        for d in op.gradient(&c).unwrap() {
            assert!(d.values().iter().all(|&v| v == 0.0));
        }
        let lap = op.laplacian(&c).unwrap();
        assert!(lap.values().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn central_difference_of_square() {
        let g = level(1, 2);
        let op = DiffOp::new(&g);
        let u = restrict(|x| x[0] * x[0], &g).unwrap();
        let du = op.derivative(0, &u).unwrap();
        assert_eq!(du.get(2), 1.0);
    }

    #[test]
    fn divergence_and_div_grad_exact_on_polynomials() {
        let g = level(2, 3);
        let op = DiffOp::new(&g);
        let phi = vec![restrict(|x| x[0], &g).unwrap(), restrict(|x| x[1], &g).unwrap()];
        let div = op.divergence(&phi).unwrap();
        let u = restrict(|x| x[0] * x[0] + x[1] * x[1], &g).unwrap();
        let dd = op.divergence(&op.gradient(&u).unwrap()).unwrap();
        for node in 0..g.node_count() {
            if !g.is_boundary(node) {
                assert!((div.get(node) - 2.0).abs() < 1e-12);
            }
            let idx = g.multi_index(node);
            let deep = (0..2).all(|a| idx[a] >= 2 && idx[a] + 2 < g.shape()[a]);
            if deep {
                assert!((dd.get(node) - 4.0).abs() < 1e-10, "{}", dd.get(node));
            }
        }
    }

    #[test]
    fn laplacian_of_square_deep_interior() {
        let g = level(1, 4);
        let op = DiffOp::new(&g);
        let u = restrict(|x| x[0] * x[0], &g).unwrap();
        let lap = op.laplacian(&u).unwrap();
        // direct wide-stencil oracle (u[i+2] - 2u[i] + u[i-2]) / 4h²
        let h = g.h();
        for i in 3..g.node_count() - 3 {
            let direct = (u.get(i + 2) - 2.0 * u.get(i) + u.get(i - 2)) / (4.0 * h * h);
            assert!((lap.get(i) - direct).abs() < 1e-9);
            assert!((lap.get(i) - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weak_laplacian_identity() {
        let g = level(2, 3);
        let op = DiffOp::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = g.node_count();
        let u = GridFunction::new(g.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let v = GridFunction::new(
            g.clone(),
            (0..n)
                .map(|i| if g.is_boundary(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect(),
        )
        .unwrap();
        let lhs = inner(&op.laplacian(&u).unwrap(), &v).unwrap();
        let du = op.gradient(&u).unwrap();
        let dv = op.gradient(&v).unwrap();
        let rhs: f64 = du.iter().zip(&dv).map(|(a, b)| inner(a, b).unwrap()).sum();
        assert!((lhs + rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn summation_by_parts_with_boundary_form() {
        for dim in 1..=3 {
            let g = level(dim, 2);
            let op = DiffOp::new(&g);
            let mut rng = ChaCha8Rng::seed_from_u64(dim as u64);
            let n = g.node_count();
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = g.weights();
            for a in 0..dim {
                let (mut du, mut dv) = (vec![0.0; n], vec![0.0; n]);
                op.apply(a, &u, &mut du);
                op.apply(a, &v, &mut dv);
                let lhs: f64 = (0..n).map(|i| w[i] * (du[i] * v[i] + u[i] * dv[i])).sum();
                assert!((lhs - op.boundary_form(a, &u, &v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn locality_of_sigma_derivative() {
        let g = level(2, 2);
        let op = DiffOp::new(&g);
        for a in [0, 6, 12, 24] {
            let s = crate::calculus::sigma(&g, a).unwrap();
            let monad = crate::grid::monad_neighbors(&g, a).unwrap();
            for d in op.gradient(&s).unwrap() {
                for node in 0..g.node_count() {
                    if d.get(node) != 0.0 {
                        assert!(monad.contains(node));
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_is_constants() {
        for (dim, n) in [(1, 3), (1, 4), (2, 2), (2, 3)] {
            assert_eq!(DiffOp::new(&level(dim, n)).kernel_dimension().unwrap(), 1);
        }
    }
}
