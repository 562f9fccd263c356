//! Piecewise-linear (P1) Galerkin engine on the Kuhn triangulation of a level.
//!
//! Each cell `[i, i+1]^N` is cut into `N!` simplices, one per axis ordering
//! `π`, with vertices `v0, v0 + e_{π1}, v0 + e_{π1} + e_{π2}, …`. The
//! triangulation refines into itself under dyadic bisection, so the P1 spaces
//! of consecutive levels are nested and [`KuhnMesh::prolong`] is exact.
//!
//! Energies are integrated exactly over P1 functions. Unlike the central
//! difference operator, the P1 gradient has no near-kernel oscillating modes,
//! which matters for minimization.

use std::sync::Arc;

use super::GridFunction;
use crate::error::{usage, Error, Result};
use crate::grid::GridLevel;
use crate::par;

/// One simplex as seen by an element kernel.
pub struct Simplex<'a> {
    /// Global node indices along the Kuhn path.
    pub nodes: &'a [usize],
    /// Values of `u` at those nodes.
    pub values: &'a [f64],
    /// Axis traversed by path edge `k` (`nodes[k] -> nodes[k+1]`).
    pub axes: &'a [usize],
    pub volume: f64,
    pub h: f64,
}

#[derive(Clone, Debug)]
pub struct KuhnMesh {
    level: Arc<GridLevel>,
    /// Node offset of each cell corner, indexed by corner bit mask.
    corner_offset: Vec<usize>,
    /// Corner masks along each Kuhn path, and its axis ordering.
    paths: Vec<(Vec<usize>, Vec<usize>)>,
    cell_shape: Vec<usize>,
    volume: f64,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Complete homogeneous symmetric polynomials `h_0..=h_p` of `x`.
fn complete_homogeneous(x: &[f64], p: usize) -> Vec<f64> {
    let mut h = vec![0.0; p + 1];
    h[0] = 1.0;
    for &xi in x {
        for j in 1..=p {
            h[j] += xi * h[j - 1];
        }
    }
    h
}

impl KuhnMesh {
    pub fn new(level: &Arc<GridLevel>) -> Self {
        let dim = level.dim();
        let corner_offset = (0..1usize << dim)
            .map(|mask| {
                (0..dim)
                    .filter(|a| mask >> a & 1 == 1)
                    .map(|a| level.strides()[a])
                    .sum()
            })
            .collect();
        let paths = permutations(dim)
            .into_iter()
            .map(|perm| {
                let mut mask = 0usize;
                let mut corners = vec![0];
                for &a in &perm {
                    mask |= 1 << a;
                    corners.push(mask);
                }
                (corners, perm)
            })
            .collect();
        KuhnMesh {
            level: level.clone(),
            corner_offset,
            paths,
            cell_shape: level.shape().iter().map(|s| s - 1).collect(),
            volume: level.h().powi(dim as i32) / factorial(dim),
        }
    }

    pub fn level(&self) -> &Arc<GridLevel> {
        &self.level
    }

    pub fn simplex_volume(&self) -> f64 {
        self.volume
    }

    pub fn simplices_per_cell(&self) -> usize {
        self.paths.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cell_shape.iter().product()
    }

    fn cell_origin(&self, mut cell: usize) -> usize {
        let dim = self.cell_shape.len();
        let mut origin = 0;
        for a in (0..dim).rev() {
            let i = cell % self.cell_shape[a];
            cell /= self.cell_shape[a];
            origin += i * self.level.strides()[a];
        }
        origin
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.level.node_count() {
            return usage(format!(
                "{} values for a level with {} nodes",
                u.len(),
                self.level.node_count()
            ));
        }
        Ok(())
    }

    /// Sums `element` over every simplex and gathers the local gradients.
    ///
    /// `element` returns the simplex contribution and adds its partial
    /// derivatives with respect to the simplex vertex values into the second
    /// argument. The result is independent of thread count.
    pub fn assemble<F>(&self, u: &[f64], element: F) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(&Simplex, &mut [f64]) -> f64 + Sync + Send,
    {
        self.check(u)?;
        let dim = self.level.dim();
        let corners = 1usize << dim;
        let cells = self.cell_count();
        let h = self.level.h();
        let mut local = vec![0.0; cells * corners];
        let total = par::blocks_mut_sum(&mut local, corners, |cell, buf| {
            let origin = self.cell_origin(cell);
            let mut nodes = [0usize; 5];
            let mut values = [0.0; 5];
            let mut grad = [0.0; 5];
            let mut acc = 0.0;
            for (path, axes) in &self.paths {
                for (k, &mask) in path.iter().enumerate() {
                    nodes[k] = origin + self.corner_offset[mask];
                    values[k] = u[nodes[k]];
                    grad[k] = 0.0;
                }
                let s = Simplex {
                    nodes: &nodes[..=dim],
                    values: &values[..=dim],
                    axes,
                    volume: self.volume,
                    h,
                };
                acc += element(&s, &mut grad[..=dim]);
                for (k, &mask) in path.iter().enumerate() {
                    buf[mask] += grad[k];
                }
            }
            acc
        });
        let mut grad = vec![0.0; u.len()];
        let g = &*self.level;
        let cell_shape = &self.cell_shape;
        par::fill_indexed(&mut grad, |node| {
            let idx = g.multi_index(node);
            let mut acc = 0.0;
            'corner: for mask in 0..corners {
                let mut cell = 0;
                for a in 0..dim {
                    let bit = mask >> a & 1;
                    if idx[a] < bit || idx[a] - bit >= cell_shape[a] {
                        continue 'corner;
                    }
                    cell = cell * cell_shape[a] + (idx[a] - bit);
                }
                acc += local[cell * corners + mask];
            }
            acc
        });
        Ok((total, grad))
    }

    /// `∫|∇u|²` of the P1 interpolant, with gradient.
    pub fn dirichlet_energy(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.assemble(u, |s, g| {
            let c = s.volume / (s.h * s.h);
            let mut e = 0.0;
            for k in 0..s.axes.len() {
                let d = s.values[k + 1] - s.values[k];
                e += d * d;
                g[k + 1] += 2.0 * c * d;
                g[k] -= 2.0 * c * d;
            }
            c * e
        })
    }

    /// `∫u^p` of the P1 interpolant (exact), with gradient.
    pub fn power_integral(&self, u: &[f64], p: usize) -> Result<(f64, Vec<f64>)> {
        if p == 0 {
            return usage("power must be positive");
        }
        let dim = self.level.dim();
        // ∫_T Π λ_i^{k_i} = |T| N! Π k_i! / (N + Σk_i)!, summed over |k| = p
        let scale = factorial(dim) * factorial(p) / factorial(dim + p);
        self.assemble(u, |s, g| {
            let hp = complete_homogeneous(s.values, p);
            let c = s.volume * scale;
            for (j, &x) in s.values.iter().enumerate() {
                let mut d = 0.0;
                let mut xk = 1.0;
                for k in 0..p {
                    d += xk * hp[p - 1 - k];
                    xk *= x;
                }
                g[j] += c * d;
            }
            c * hp[p]
        })
    }

    /// `∫a u²` with both `a` and `u` linear on each simplex, with gradient in `u`.
    pub fn weighted_square(&self, a: &[f64], u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(a)?;
        let dim = self.level.dim();
        let scale = factorial(dim) / factorial(dim + 3);
        self.assemble(u, |s, g| {
            let n = s.values.len();
            let mut sa = 0.0;
            let mut su = 0.0;
            let mut au = 0.0;
            let mut uu = 0.0;
            let mut auu = 0.0;
            for k in 0..n {
                let ak = a[s.nodes[k]];
                let uk = s.values[k];
                sa += ak;
                su += uk;
                au += ak * uk;
                uu += uk * uk;
                auu += ak * uk * uk;
            }
            let c = s.volume * scale;
            for k in 0..n {
                let ak = a[s.nodes[k]];
                let uk = s.values[k];
                g[k] += c * (2.0 * sa * su + 2.0 * au + 2.0 * su * ak + 2.0 * sa * uk + 4.0 * ak * uk);
            }
            c * (sa * su * su + 2.0 * su * au + sa * uu + 2.0 * auu)
        })
    }

    /// Stiffness product `K u`, the gradient of `½∫|∇u|²`.
    pub fn stiffness(&self, u: &[f64]) -> Result<Vec<f64>> {
        let (_, mut g) = self.dirichlet_energy(u)?;
        g.iter_mut().for_each(|v| *v *= 0.5);
        Ok(g)
    }

    /// Lumped P1 Laplacian `-H⁻¹ K u`; at interior nodes this is the compact
    /// `2N+1`-point stencil.
    pub fn laplacian(&self, u: &GridFunction) -> Result<GridFunction> {
        if !self.level.same_level(u.level()) {
            return Err(Error::LevelMismatch(format!("{} vs {}", self.level.key(), u.level().key())));
        }
        let mut k = self.stiffness(u.values())?;
        for (v, w) in k.iter_mut().zip(self.level.weights()) {
            *v = -*v / w;
        }
        Ok(GridFunction::from_parts(self.level.clone(), k))
    }

    /// Value of the P1 interpolant of `u` at an arbitrary point of the box.
    pub fn interpolate(&self, u: &[f64], x: &[f64]) -> f64 {
        let g = &*self.level;
        let dim = g.dim();
        let mut origin = 0;
        let mut t = [0.0; 4];
        for a in 0..dim {
            let s = ((x[a] - g.domain().lower()[a]) / g.h()).clamp(0.0, self.cell_shape[a] as f64);
            let i = (s.floor() as usize).min(self.cell_shape[a] - 1);
            t[a] = s - i as f64;
            origin += i * g.strides()[a];
        }
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&p, &q| t[q].total_cmp(&t[p]));
        let mut node = origin;
        let mut value = (1.0 - t[order[0]]) * u[node];
        for k in 0..dim {
            node += g.strides()[order[k]];
            let next = if k + 1 < dim { t[order[k + 1]] } else { 0.0 };
            value += (t[order[k]] - next) * u[node];
        }
        value
    }
}

/// Nodal values on `fine` of the P1 interpolant of `u`; exact because the
/// Kuhn triangulations are nested.
pub fn prolong(u: &GridFunction, fine: &Arc<GridLevel>) -> Result<GridFunction> {
    let coarse = u.level();
    if fine.level() < coarse.level() || fine.domain() != coarse.domain() {
        return Err(Error::LevelMismatch(format!(
            "cannot prolong {} to {}",
            coarse.key(),
            fine.key()
        )));
    }
    let mut cur = u.clone();
    while cur.level().level() < fine.level() {
        let next = GridLevel::build(fine.domain(), cur.level().level() + 1)?;
        cur = prolong_once(&cur, &next);
    }
    Ok(GridFunction::from_parts(fine.clone(), cur.into_values()))
}

fn prolong_once(u: &GridFunction, fine: &Arc<GridLevel>) -> GridFunction {
    let coarse = u.level();
    let dim = fine.dim();
    let mut out = vec![0.0; fine.node_count()];
    par::fill_indexed(&mut out, |node| {
        let idx = fine.multi_index(node);
        let mut lo = 0;
        let mut hi = 0;
        for a in 0..dim {
            let c = idx[a] / 2;
            lo += c * coarse.strides()[a];
            hi += (c + idx[a] % 2) * coarse.strides()[a];
        }
        0.5 * (u.get(lo) + u.get(hi))
    });
    GridFunction::from_parts(fine.clone(), out)
}
