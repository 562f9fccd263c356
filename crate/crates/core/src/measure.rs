//! Density functions, perimeters, surface integrals and the discrete Gauss
//! identity.
//!
//! `θ_E(a)` is the fraction of the ball `B_η(a)` covered by `E`, with
//! `η = η_factor · h`. Half-spaces, boxes and balls use exact volume fractions;
//! explicit node masks use a fixed subcell midpoint rule.

use std::sync::{Arc, OnceLock};

use crate::calculus::{DiffOp, GridFunction};
use crate::error::{usage, Error, Result};
use crate::grid::{GridLevel, NodeSet};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `x_axis < threshold`
    Below,
    /// `x_axis > threshold`
    Above,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegionDescriptor {
    HalfSpace { axis: usize, threshold: f64, side: Side },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Union of the nearest-node cells of the given nodes.
    Mask(NodeSet),
}

/// Midpoint samples per axis across the bounding cube of `B_η` for masks.
pub const MASK_SAMPLES_PER_AXIS: usize = 32;

impl RegionDescriptor {
    pub fn validate(&self, level: &GridLevel) -> Result<()> {
        let dim = level.dim();
        let d = level.domain();
        let inside = |x: f64, a: usize| x >= d.lower()[a] && x <= d.upper()[a];
        match self {
            RegionDescriptor::HalfSpace { axis, threshold, .. } => {
                if *axis >= dim || !inside(*threshold, *axis) {
                    return usage(format!("half-space axis {axis} threshold {threshold} outside the domain"));
                }
            }
            RegionDescriptor::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return usage("region box dimension mismatch");
                }
                for a in 0..dim {
                    if !(lower[a] < upper[a]) || !inside(lower[a], a) || !inside(upper[a], a) {
                        return usage(format!("region box axis {a} invalid or outside the domain"));
                    }
                }
            }
            RegionDescriptor::Ball { center, radius } => {
                if center.len() != dim || !(*radius > 0.0) || !d.contains(center) {
                    return usage("region ball invalid or centred outside the domain");
                }
            }
            RegionDescriptor::Mask(set) => {
                if !set.belongs_to(level) {
                    return Err(Error::LevelMismatch(format!("mask of {} used on {}", set.key(), level.key())));
                }
            }
        }
        Ok(())
    }

    /// Nested descriptors of the same kind: true when `self ⊆ other`.
    pub fn is_subset_of(&self, other: &RegionDescriptor) -> Option<bool> {
        use RegionDescriptor::*;
        match (self, other) {
            (HalfSpace { axis: a, threshold: s, side: p }, HalfSpace { axis: b, threshold: t, side: q }) => {
                Some(a == b && p == q && if *p == Side::Below { s <= t } else { s >= t })
            }
            (Box { lower: l1, upper: u1 }, Box { lower: l2, upper: u2 }) => {
                Some(l1.iter().zip(l2).all(|(a, b)| a >= b) && u1.iter().zip(u2).all(|(a, b)| a <= b))
            }
            (Ball { center: c1, radius: r1 }, Ball { center: c2, radius: r2 }) => {
                Some(dist(c1, c2) + r1 <= *r2)
            }
            (Mask(a), Mask(b)) => Some(a.indices().iter().all(|&i| b.contains(i))),
            _ => None,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Fraction of the unit `N`-ball with first coordinate below `d`.
pub fn ball_fraction_below(dim: usize, d: f64) -> f64 {
    let d = d.clamp(-1.0, 1.0);
    let s = (1.0 - d * d).max(0.0).sqrt();
    let pi = std::f64::consts::PI;
    match dim {
        1 => (1.0 + d) / 2.0,
        2 => (d * s + d.asin() + pi / 2.0) / pi,
        3 => (2.0 + 3.0 * d - d * d * d) / 4.0,
        4 => {
            // ∫(1-t²)^{3/2} = (t(5-2t²)√(1-t²) + 3 asin t) / 8, total 3π/8
            let f = |t: f64, s: f64| (t * (5.0 - 2.0 * t * t) * s + 3.0 * t.asin()) / 8.0;
            (f(d, s) - f(-1.0, 0.0)) / (3.0 * pi / 8.0)
        }
        _ => unreachable!("dimension checked by Domain"),
    }
}

/// Fraction of `B_η(a)` inside `B_R(c)` for centres at distance `dd`.
fn ball_ball_fraction(dim: usize, dd: f64, eta: f64, r: f64) -> f64 {
    if dd >= r + eta {
        return 0.0;
    }
    if dd + eta <= r {
        return 1.0;
    }
    let ratio = (r / eta).powi(dim as i32);
    if dd + r <= eta {
        return ratio;
    }
    // two caps cut by the radical plane at distance x from a
    let x = (dd * dd + eta * eta - r * r) / (2.0 * dd);
    let cap_a = 1.0 - ball_fraction_below(dim, x / eta);
    let cap_c = 1.0 - ball_fraction_below(dim, (dd - x) / r);
    (cap_a + ratio * cap_c).clamp(0.0, 1.0)
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * dq * dq);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// `N`-volume of `B_r(c) ∩ [lo, hi]`.
///
/// The first axis is integrated with `t = c_0 + r sin φ`, which removes the
/// square-root endpoint behaviour; the φ range is split wherever the
/// cross-section radius crosses a face or corner distance of the remaining
/// box, so each piece is smooth.
pub fn ball_box_volume(c: &[f64], r: f64, lo: &[f64], hi: &[f64]) -> f64 {
    if c.len() == 1 {
        return ((c[0] + r).min(hi[0]) - (c[0] - r).max(lo[0])).max(0.0);
    }
    // all inside or all outside
    let mut near2 = 0.0;
    let mut inside = true;
    for a in 0..c.len() {
        if c[a] - r < lo[a] || c[a] + r > hi[a] {
            inside = false;
        }
        let dn = (lo[a] - c[a]).max(0.0).max(c[a] - hi[a]);
        near2 += dn * dn;
    }
    let dim = c.len();
    let full = unit_ball_volume(dim) * r.powi(dim as i32);
    if inside {
        return full;
    }
    if near2 >= r * r {
        return 0.0;
    }
    // a single cutting face leaves a half-space cap in closed form
    let cuts: Vec<f64> = (0..dim)
        .flat_map(|a| [(c[a] - r < lo[a]).then(|| c[a] - lo[a]), (c[a] + r > hi[a]).then(|| hi[a] - c[a])])
        .flatten()
        .collect();
    if let [d] = cuts[..] {
        return full * ball_fraction_below(dim, d / r);
    }
    let a0 =((lo[0] - c[0]) / r).clamp(-1.0, 1.0).asin();
    let b0 = ((hi[0] - c[0]) / r).clamp(-1.0, 1.0).asin();
    if b0 <= a0 {
        return 0.0;
    }
    // squared distances from the projected centre to faces and corners of
    // the remaining box
    let rest = dim - 1;
    let mut crit: Vec<f64> = Vec::new();
    let faces: Vec<[f64; 2]> = (1..dim).map(|a| [(lo[a] - c[a]).powi(2), (hi[a] - c[a]).powi(2)]).collect();
    for mask in 1usize..(1 << rest) {
        for choice in 0usize..(1 << rest) {
            let mut s = 0.0;
            for j in 0..rest {
                if mask >> j & 1 == 1 {
                    s += faces[j][choice >> j & 1];
                }
            }
            crit.push(s);
        }
    }
    let mut breaks = vec![a0, b0];
    for s in crit {
        // r cos φ = √s
        let ratio = s.sqrt() / r;
        if ratio < 1.0 {
            let phi = ratio.acos();
            for p in [phi, -phi] {
                if p > a0 && p < b0 {
                    breaks.push(p);
                }
            }
        }
    }
    breaks.push(0.0f64.clamp(a0, b0));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (gx, gw) = gl16();
    let mut total = 0.0;
    for win in breaks.windows(2) {
        let (p, q) = (win[0], win[1]);
        if q - p <= 0.0 {
            continue;
        }
        let half = 0.5 * (q - p);
        let mid = 0.5 * (q + p);
        for (x, w) in gx.iter().zip(gw) {
            let phi = mid + half * x;
            let rho = r * phi.cos();
            let inner = ball_box_volume(&c[1..], rho, &lo[1..], &hi[1..]);
            total += w * half * inner * r * phi.cos();
        }
    }
    total.min(full)
}

pub fn unit_ball_volume(dim: usize) -> f64 {
    let pi = std::f64::consts::PI;
    match dim {
        1 => 2.0,
        2 => pi,
        3 => 4.0 * pi / 3.0,
        4 => pi * pi / 2.0,
        _ => unreachable!("dimension checked by Domain"),
    }
}

/// Integer lattice offsets and sample counts for the mask rule at `η = f·h`.
fn mask_stencil(dim: usize, eta_factor: f64) -> Vec<(Vec<i64>, f64)> {
    let m = MASK_SAMPLES_PER_AXIS;
    let mut counts: std::collections::BTreeMap<Vec<i64>, f64> = Default::default();
    let total = m.pow(dim as u32);
    for s in 0..total {
        let mut rem = s;
        let mut off = vec![0.0; dim];
        for o in off.iter_mut() {
            let i = rem % m;
            rem /= m;
            *o = ((i as f64 + 0.5) / m as f64 * 2.0 - 1.0) * eta_factor;
        }
        if off.iter().map(|v| v * v).sum::<f64>() <= eta_factor * eta_factor {
            let key: Vec<i64> = off.iter().map(|v| v.round() as i64).collect();
            *counts.entry(key).or_insert(0.0) += 1.0;
        }
    }
    let n: f64 = counts.values().sum();
    counts.into_iter().map(|(k, v)| (k, v / n)).collect()
}

/// Density function `θ_E` on `level`, with `η = eta_factor · h`.
pub fn density(region: &RegionDescriptor, level: &Arc<GridLevel>, eta_factor: f64) -> Result<GridFunction> {
    if !(eta_factor >= 1.0) {
        return usage(format!("η factor must be at least 1, got {eta_factor}"));
    }
    region.validate(level)?;
    let dim = level.dim();
    let eta = eta_factor * level.h();
    let mut theta = vec![0.0; level.node_count()];
    match region {
        RegionDescriptor::HalfSpace { axis, threshold, side } => {
            par::fill_indexed(&mut theta, |node| {
                let x = level.coord(node, *axis);
                let s = match side {
                    Side::Below => threshold - x,
                    Side::Above => x - threshold,
                };
                ball_fraction_below(dim, s / eta)
            });
        }
        RegionDescriptor::Ball { center, radius } => {
            par::fill_indexed(&mut theta, |node| {
                ball_ball_fraction(dim, dist(&level.point(node), center), eta, *radius)
            });
        }
        RegionDescriptor::Box { lower, upper } => {
            let full = unit_ball_volume(dim) * eta.powi(dim as i32);
            par::fill_indexed(&mut theta, |node| {
                (ball_box_volume(&level.point(node), eta, lower, upper) / full).clamp(0.0, 1.0)
            });
        }
        RegionDescriptor::Mask(set) => {
            let mask = set.mask();
            let stencil = mask_stencil(dim, eta_factor);
            let shape = level.shape();
            par::fill_indexed(&mut theta, |node| {
                let idx = level.multi_index(node);
                let mut acc = 0.0;
                for (off, w) in &stencil {
                    let mut j = 0;
                    for a in 0..dim {
                        let i = (idx[a] as i64 + off[a]).clamp(0, shape[a] as i64 - 1) as usize;
                        j += i * level.strides()[a];
                    }
                    if mask[j] {
                        acc += w;
                    }
                }
                acc.clamp(0.0, 1.0)
            });
        }
    }
    GridFunction::new(level.clone(), theta)
}

/// `|Dθ|` at every node.
pub fn gradient_magnitude(theta: &GridFunction) -> Result<GridFunction> {
    let op = DiffOp::new(theta.level());
    let grad = op.gradient(theta)?;
    let mut mag = vec![0.0; theta.values().len()];
    par::fill_indexed(&mut mag, |i| grad.iter().map(|g| g.get(i).powi(2)).sum::<f64>().sqrt());
    GridFunction::new(theta.level().clone(), mag)
}

/// `∫|Dθ_E| dx` with `η = h`.
pub fn perimeter(region: &RegionDescriptor, level: &Arc<GridLevel>) -> Result<f64> {
    perimeter_with(region, level, 1.0)
}

pub fn perimeter_with(region: &RegionDescriptor, level: &Arc<GridLevel>, eta_factor: f64) -> Result<f64> {
    let theta = density(region, level, eta_factor)?;
    crate::calculus::integral(&gradient_magnitude(&theta)?, None)
}

/// `∫_{∂E} v dS := ∫ v |Dθ_E| dx`.
pub fn surface_integral(v: &GridFunction, region: &RegionDescriptor) -> Result<f64> {
    let theta = density(region, v.level(), 1.0)?;
    crate::calculus::inner(v, &gradient_magnitude(&theta)?)
}

#[derive(Clone, Debug)]
pub struct GaussCheck {
    /// `∫ (D·φ) θ dx`
    pub lhs: f64,
    /// `∫ φ·n |Dθ| dx` with `n = -Dθ/|Dθ|`
    pub rhs: f64,
    /// Summation-by-parts term on the box boundary, so that
    /// `lhs = rhs + boundary_flux` exactly. Zero when θ vanishes on the box
    /// boundary.
    pub boundary_flux: f64,
    pub normal: Vec<GridFunction>,
}

impl GaussCheck {
    pub fn defect(&self) -> f64 {
        (self.lhs - self.rhs - self.boundary_flux).abs()
    }
}

/// Relative threshold below which `Dθ` is treated as zero for the normal.
pub const NORMAL_CUTOFF: f64 = 1e-14;

pub fn gauss_check(phi: &[GridFunction], region: &RegionDescriptor) -> Result<GaussCheck> {
    let Some(first) = phi.first() else {
        return usage("empty vector field");
    };
    let theta = density(region, first.level(), 1.0)?;
    gauss_check_density(phi, &theta)
}

/// [`gauss_check`] against a precomputed density.
pub fn gauss_check_density(phi: &[GridFunction], theta: &GridFunction) -> Result<GaussCheck> {
    let level = theta.level().clone();
    let dim = level.dim();
    if phi.len() != dim {
        return usage(format!("{} field components for dimension {dim}", phi.len()));
    }
    for p in phi {
        p.check_same(theta)?;
    }
    let op = DiffOp::new(&level);
    let div = op.divergence(phi)?;
    let lhs = crate::calculus::inner(&div, theta)?;
    let dtheta = op.gradient(theta)?;
    let n = level.node_count();
    let mag: Vec<f64> = (0..n)
        .map(|i| dtheta.iter().map(|g| g.get(i).powi(2)).sum::<f64>().sqrt())
        .collect();
    let cut = NORMAL_CUTOFF * mag.iter().fold(0.0f64, |m, v| m.max(*v));
    let normal: Vec<GridFunction> = (0..dim)
        .map(|a| {
            let vals = (0..n)
                .map(|i| if mag[i] > cut { -dtheta[a].get(i) / mag[i] } else { 0.0 })
                .collect();
            GridFunction::new(level.clone(), vals)
        })
        .collect::<Result<_>>()?;
    let w = level.weights();
    let rhs = par::sum_indexed(n, |i| {
        let dot: f64 = (0..dim).map(|a| phi[a].get(i) * normal[a].get(i)).sum();
        dot * mag[i] * w[i]
    });
    let h = level.h();
    let shape = level.shape();
    let boundary_flux = par::sum_indexed(n, |i| {
        let idx = level.multi_index(i);
        let mut s = 0.0;
        for a in 0..dim {
            // B_a = diag(∓ transverse weight) on the two faces normal to a
            let t = 2.0 * w[i] / h;
            if idx[a] == 0 {
                s -= phi[a].get(i) * theta.get(i) * t;
            } else if idx[a] + 1 == shape[a] {
                s += phi[a].get(i) * theta.get(i) * t;
            }
        }
        s
    });
    Ok(GaussCheck { lhs, rhs, boundary_flux, normal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::restrict;
    use crate::grid::{build_level, Domain};

    fn unit(dim: usize, n: u32) -> Arc<GridLevel> {
        build_level(&Domain::unit(dim).unwrap(), n).unwrap()
    }

    #[test]
    fn half_space_probes() {
        let g = unit(1, 2);
        let r = RegionDescriptor::HalfSpace { axis: 0, threshold: 0.5, side: Side::Below };
        let t = density(&r, &g, 1.0).unwrap();
        assert_eq!(t.get(1), 1.0);
        assert_eq!(t.get(2), 0.5);
        assert_eq!(t.get(3), 0.0);
        for dim in 2..=3 {
            let g = unit(dim, 3);
            let t = density(&r, &g, 1.0).unwrap();
            let mid = g.nearest_node(&vec![0.5; dim]);
            assert_eq!(t.get(mid), 0.5);
        }
    }

    #[test]
    fn fractions_are_consistent() {
        for dim in 1..=4 {
            assert!((ball_fraction_below(dim, 0.0) - 0.5).abs() < 1e-15);
            assert_eq!(ball_fraction_below(dim, 1.0), 1.0);
            assert!(ball_fraction_below(dim, -1.0).abs() < 1e-15);
            // a huge ball looks like a half-space
            let f = ball_ball_fraction(dim, 1e6 + 0.3, 1.0, 1e6);
            assert!((f - ball_fraction_below(dim, -0.3)).abs() < 1e-5, "{dim}");
        }
    }

    #[test]
    fn ball_box_volume_oracles() {
        let pi = std::f64::consts::PI;
        // quarter disc at a corner
        let v = ball_box_volume(&[0.0, 0.0], 1.0, &[0.0, 0.0], &[5.0, 5.0]);
        assert!((v - pi / 4.0).abs() < 1e-12, "{v}");
        // octant of a ball
        let v = ball_box_volume(&[0.0, 0.0, 0.0], 1.0, &[0.0, 0.0, 0.0], &[5.0, 5.0, 5.0]);
        assert!((v - pi / 6.0).abs() < 1e-10, "{v}");
        // half disc
        let v = ball_box_volume(&[0.0, 0.0], 2.0, &[-5.0, 0.0], &[5.0, 5.0]);
        assert!((v - 2.0 * pi).abs() < 1e-12);
        // disc cut by the strip |y| < 0.5: 2(asin(.5)·1 + .5·√.75)
        let v = ball_box_volume(&[0.0, 0.0], 1.0, &[-5.0, -0.5], &[5.0, 0.5]);
        let expect = 2.0 * ((0.5f64).asin() + 0.5 * 0.75f64.sqrt());
        assert!((v - expect).abs() < 1e-12, "{v} {expect}");
    }

    #[test]
    fn mask_sampling_uses_enough_points() {
        for dim in 1..=2 {
            let st = mask_stencil(dim, 1.0);
            assert!((st.iter().map(|s| s.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let inside = (0..MASK_SAMPLES_PER_AXIS.pow(2))
            .filter(|s| {
                let m = MASK_SAMPLES_PER_AXIS as f64;
                let x = ((s % MASK_SAMPLES_PER_AXIS) as f64 + 0.5) / m * 2.0 - 1.0;
                let y = ((s / MASK_SAMPLES_PER_AXIS) as f64 + 0.5) / m * 2.0 - 1.0;
                x * x + y * y <= 1.0
            })
            .count();
        assert!(inside >= 256);
    }

    #[test]
    fn empty_mask_has_no_perimeter() {
        let g = unit(2, 3);
        let r = RegionDescriptor::Mask(NodeSet::empty(&g));
        assert_eq!(perimeter(&r, &g).unwrap(), 0.0);
    }

    #[test]
    fn full_mask_density_is_one_up_to_the_edge() {
        let g = unit(2, 3);
        let r = RegionDescriptor::Mask(NodeSet::all(&g));
        let t = density(&r, &g, 1.0).unwrap();
        assert!(t.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gauss_with_constant_field() {
        let domain = Domain::new(vec![-0.5, -0.5], vec![1.5, 1.5]).unwrap();
        let g = build_level(&domain, 5).unwrap();
        let r = RegionDescriptor::Box { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0] };
        let phi = vec![GridFunction::constant(&g, 1.0), GridFunction::constant(&g, -2.0)];
        let c = gauss_check(&phi, &r).unwrap();
        assert_eq!(c.boundary_flux, 0.0);
        let p = perimeter(&r, &g).unwrap();
        assert!(c.lhs.abs() <= 1e-10 * 5f64.sqrt() * p);
        assert!(c.rhs.abs() <= 1e-10 * 5f64.sqrt() * p);
        assert!(c.defect() <= 1e-12 * (c.lhs.abs() + c.rhs.abs() + 1.0));
        let id = vec![restrict(|x| x[0], &g).unwrap(), restrict(|x| x[1], &g).unwrap()];
        let c = gauss_check(&id, &r).unwrap();
        assert!((c.lhs - 2.0).abs() < 0.1, "{}", c.lhs);
    }

    #[test]
    fn perimeters_at_fine_level() {
        let domain = Domain::new(vec![-0.5, -0.5], vec![1.5, 1.5]).unwrap();
        let g = build_level(&domain, 8).unwrap();
        assert_eq!(g.h(), 1.0 / 128.0);
        let square = RegionDescriptor::Box { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0] };
        let p = perimeter(&square, &g).unwrap();
        assert!((p - 4.0).abs() < 0.2, "{p}");
        let x = restrict(|x| x[0], &g).unwrap();
        let s = surface_integral(&x, &square).unwrap();
        assert!((s - 2.0).abs() < 0.1, "{s}");
        let g = unit(2, 7);
        let disc = RegionDescriptor::Ball { center: vec![0.5, 0.5], radius: 0.3 };
        let p = perimeter(&disc, &g).unwrap();
        let exact = 0.6 * std::f64::consts::PI;
        assert!((p - exact).abs() < 0.05 * exact, "{p}");
    }

    #[test]
    fn normal_points_outward() {
        let g = unit(2, 5);
        let r = RegionDescriptor::Ball { center: vec![0.5, 0.5], radius: 0.3 };
        let phi = vec![GridFunction::zeros(&g), GridFunction::zeros(&g)];
        let c = gauss_check(&phi, &r).unwrap();
        let node = g.nearest_node(&[0.8, 0.5]);
        assert!(c.normal[0].get(node) > 0.99);
        assert_eq!(c.normal[0].get(g.nearest_node(&[0.5, 0.5])), 0.0);
    }
}
