//! `calculus-check`: exact identities (summation by parts, Gauss), convergence
//! orders, density probes and perimeters.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ultranet::calculus::{inner, integral, restrict, DiffOp, GridFunction, TestFunction};
use ultranet::grid::{build_level, Domain, GridLevel, NodeSet};
use ultranet::io::{fmt, Table};
use ultranet::measure::{density, gauss_check_density, perimeter, RegionDescriptor, Side};

use crate::config::{config_hash, LevelRange};
use crate::report::{Invariant, OutDir, RunReport};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub seed: u64,
    /// Random instances per (dimension, level) for the exact identities.
    pub instances: usize,
    pub identity_dims: Vec<usize>,
    pub identity_levels: LevelRange,
    pub identity_tol: f64,
    pub convergence_levels: LevelRange,
    pub order_tol: f64,
    /// Quadrature passes when the fitted order is at least `2 - quadrature_slack`.
    pub quadrature_slack: f64,
    pub heaviside_levels: LevelRange,
    pub heaviside_min_order: f64,
    /// Levels on `[-0.5, 1.5]²`; level 8 has `h = 1/128`.
    pub perimeter_levels: LevelRange,
    pub perimeter_tol: f64,
    pub disk_radius: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            seed: 0,
            instances: 100,
            identity_dims: vec![1, 2],
            identity_levels: LevelRange { first: 3, last: 7 },
            identity_tol: 1e-12,
            convergence_levels: LevelRange { first: 3, last: 8 },
            order_tol: 0.2,
            quadrature_slack: 0.01,
            heaviside_levels: LevelRange { first: 4, last: 12 },
            heaviside_min_order: 0.8,
            perimeter_levels: LevelRange { first: 4, last: 8 },
            perimeter_tol: 0.05,
            disk_radius: 0.3,
        }
    }
}

impl CheckConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let c: CheckConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid check config: {e}")))?;
        if c.identity_dims.is_empty() || c.identity_dims.iter().any(|&d| d == 0 || d > 4) {
            return Err(CliError::Config("identity_dims must list dimensions in 1..=4".into()));
        }
        if c.instances == 0 {
            return Err(CliError::Config("instances must be positive".into()));
        }
        Ok(c)
    }

    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_string(self).expect("config serializes"))
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_order(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn random_field(level: &Arc<GridLevel>, rng: &mut ChaCha8Rng) -> GridFunction {
    let v = (0..level.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GridFunction::new(level.clone(), v).expect("sizes match")
}

/// Random node mask: a ball, a box or an i.i.d. subset.
fn random_mask(level: &GridLevel, k: usize, rng: &mut ChaCha8Rng) -> NodeSet {
    let dim = level.dim();
    match k % 3 {
        0 => {
            let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r = rng.gen_range(0.1..0.6);
            NodeSet::from_predicate(level, |a| {
                level.point(a).iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>() <= r * r
            })
        }
        1 => {
            let lo: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.2..0.5)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.2..0.9)).collect();
            NodeSet::from_predicate(level, |a| {
                level.point(a).iter().enumerate().all(|(i, x)| *x >= lo[i] && *x <= hi[i])
            })
        }
        _ => {
            let keep: Vec<bool> = (0..level.node_count()).map(|_| rng.gen_bool(0.5)).collect();
            NodeSet::from_predicate(level, |a| keep[a])
        }
    }
}

/// Sum over box faces of `|B_axis|` weighted `|u| |v|`.
fn boundary_magnitude(level: &GridLevel, axis: usize, u: &[f64], v: &[f64]) -> f64 {
    let (s, n, h) = (level.strides()[axis], level.shape()[axis], level.h());
    (0..level.node_count())
        .filter(|&a| {
            let i = (a / s) % n;
            i == 0 || i + 1 == n
        })
        .map(|a| 2.0 * level.weight(a) / h * (u[a] * v[a]).abs())
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub suite: &'static str,
    pub dim: usize,
    pub level: u32,
    pub instances: usize,
    pub max_relative_defect: f64,
}

/// Worst relative defect of `⟨D u, v⟩ + ⟨u, D v⟩ = uᵀBv` and of
/// `∫(D·φ)θ = ∫φ·n|Dθ| + flux` over random instances on one level.
pub fn identity_suite(level: &Arc<GridLevel>, instances: usize, seed: u64) -> Result<(f64, f64), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = DiffOp::new(level);
    let n = level.node_count();
    let dim = level.dim();
    let w = level.weights();
    let mut sbp = 0.0f64;
    let mut gauss = 0.0f64;
    let (mut du, mut dv) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..instances {
        let u = random_field(level, &mut rng);
        let v = random_field(level, &mut rng);
        for a in 0..dim {
            op.apply(a, u.values(), &mut du);
            op.apply(a, v.values(), &mut dv);
            let (mut lhs, mut scale) = (0.0, 0.0);
            for i in 0..n {
                lhs += w[i] * (du[i] * v.get(i) + u.get(i) * dv[i]);
                scale += w[i] * ((du[i] * v.get(i)).abs() + (u.get(i) * dv[i]).abs());
            }
            let rhs = op.boundary_form(a, u.values(), v.values());
            scale += boundary_magnitude(level, a, u.values(), v.values());
            sbp = sbp.max((lhs - rhs).abs() / scale);
        }

        let phi: Vec<GridFunction> = (0..dim).map(|_| random_field(level, &mut rng)).collect();
        let mask = random_mask(level, k, &mut rng);
        let theta = density(&RegionDescriptor::Mask(mask), level, 1.0)?;
        let g = gauss_check_density(&phi, &theta)?;
        let div = op.divergence(&phi)?;
        let dtheta = op.gradient(&theta)?;
        let mut scale = 0.0;
        for i in 0..n {
            let pd: f64 = (0..dim).map(|a| (phi[a].get(i) * dtheta[a].get(i)).abs()).sum();
            scale += w[i] * ((div.get(i) * theta.get(i)).abs() + pd);
        }
        for a in 0..dim {
            scale += boundary_magnitude(level, a, phi[a].values(), theta.values());
        }
        if scale > 0.0 {
            gauss = gauss.max(g.defect() / scale);
        }
    }
    Ok((sbp, gauss))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub study: &'static str,
    pub level: u32,
    pub h: f64,
    pub error: f64,
}

fn interior_max(level: &GridLevel, f: impl Fn(usize) -> f64) -> f64 {
    (0..level.node_count()).filter(|&a| !level.is_boundary(a)).map(f).fold(0.0, f64::max)
}

/// Interior max error of `D` applied to smooth trigonometric fields.
pub fn derivative_error(dim: usize, n: u32) -> Result<(f64, f64), CliError> {
    let level = build_level(&Domain::unit(dim)?, n)?;
    let op = DiffOp::new(&level);
    let err = if dim == 1 {
        let u = restrict(|x| (2.0 * PI * x[0]).sin() + x[0] * x[0], &level)?;
        let du = op.derivative(0, &u)?;
        interior_max(&level, |a| {
            let x = level.coord(a, 0);
            (du.get(a) - (2.0 * PI * (2.0 * PI * x).cos() + 2.0 * x)).abs()
        })
    } else {
        let u = restrict(|x| (2.0 * PI * x[0]).sin() * (PI * x[1]).cos(), &level)?;
        let g = op.gradient(&u)?;
        interior_max(&level, |a| {
            let (x, y) = (level.coord(a, 0), level.coord(a, 1));
            let ex = 2.0 * PI * (2.0 * PI * x).cos() * (PI * y).cos();
            let ey = -PI * (2.0 * PI * x).sin() * (PI * y).sin();
            (g[0].get(a) - ex).abs().max((g[1].get(a) - ey).abs())
        })
    };
    Ok((level.h(), err))
}

/// Error of the pointwise integral of `exp(x + 2y + ...)` over the unit box.
pub fn quadrature_error(dim: usize, n: u32) -> Result<(f64, f64), CliError> {
    let level = build_level(&Domain::unit(dim)?, n)?;
    let u = restrict(|x| x.iter().enumerate().map(|(k, v)| (k + 1) as f64 * v).sum::<f64>().exp(), &level)?;
    let exact: f64 = (1..=dim).map(|k| (((k as f64).exp()) - 1.0) / k as f64).product();
    Ok((level.h(), (integral(&u, None)? - exact).abs()))
}

pub const HEAVISIDE_JUMP: f64 = 1.0 / 3.0;

pub fn heaviside_test_function() -> TestFunction {
    TestFunction::bump(vec![0.5], 0.45)
}

/// `-∫ H φ' dx` by composite Simpson on `[jump, support end]`.
pub fn heaviside_oracle(phi: &TestFunction) -> f64 {
    let (a, b) = (HEAVISIDE_JUMP, phi.support().1[0]);
    let m = 20_000;
    let h = (b - a) / m as f64;
    let f = |x: f64| phi.gradient(&[x])[0];
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    -s * h / 3.0
}

/// `|⟨D H°, φ°⟩ - oracle|` at level `n` on the unit interval.
pub fn heaviside_error(n: u32, phi: &TestFunction, oracle: f64) -> Result<(f64, f64), CliError> {
    let level = build_level(&Domain::unit(1)?, n)?;
    let h = restrict(|x| if x[0] >= HEAVISIDE_JUMP { 1.0 } else { 0.0 }, &level)?;
    let dh = DiffOp::new(&level).derivative(0, &h)?;
    let p = restrict(|x| phi.value(x), &level)?;
    Ok((level.h(), (inner(&dh, &p)? - oracle).abs()))
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityProbe {
    pub region: &'static str,
    pub dim: usize,
    pub probe: &'static str,
    pub expected: f64,
    pub measured: f64,
}

/// θ at deep-inside, flat-boundary and deep-outside nodes of a half-space
/// and a box, and inside/outside a ball, at level 4 of the unit box.
pub fn density_probes() -> Result<Vec<DensityProbe>, CliError> {
    let mut out = Vec::new();
    for dim in 1..=3usize {
        let level = build_level(&Domain::unit(dim)?, 4)?;
        let at = |x0: f64| {
            let mut p = vec![0.5; dim];
            p[0] = x0;
            level.nearest_node(&p)
        };
        let half = RegionDescriptor::HalfSpace { axis: 0, threshold: 0.5, side: Side::Below };
        let t = density(&half, &level, 1.0)?;
        for (probe, x0, e) in [("inside", 0.25, 1.0), ("boundary", 0.5, 0.5), ("outside", 0.75, 0.0)] {
            out.push(DensityProbe { region: "half-space", dim, probe, expected: e, measured: t.get(at(x0)) });
        }
        let bx = RegionDescriptor::Box { lower: vec![0.25; dim], upper: vec![0.75; dim] };
        let t = density(&bx, &level, 1.0)?;
        for (probe, x0, e) in [("inside", 0.5, 1.0), ("boundary", 0.25, 0.5), ("outside", 0.0625, 0.0)] {
            out.push(DensityProbe { region: "box", dim, probe, expected: e, measured: t.get(at(x0)) });
        }
        let ball = RegionDescriptor::Ball { center: vec![0.5; dim], radius: 0.3 };
        let t = density(&ball, &level, 1.0)?;
        for (probe, x0, e) in [("inside", 0.5, 1.0), ("outside", 0.0, 0.0)] {
            out.push(DensityProbe { region: "ball", dim, probe, expected: e, measured: t.get(at(x0)) });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PerimeterRow {
    pub shape: &'static str,
    pub level: u32,
    pub h: f64,
    pub measured: f64,
    pub exact: f64,
    pub relative_error: f64,
}

pub fn perimeter_study(levels: LevelRange, radius: f64) -> Result<Vec<PerimeterRow>, CliError> {
    let domain = Domain::new(vec![-0.5, -0.5], vec![1.5, 1.5])?;
    let mut rows = Vec::new();
    for n in levels.range() {
        let level = build_level(&domain, n)?;
        let shapes = [
            ("unit-square", RegionDescriptor::Box { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0] }, 4.0),
            ("disk", RegionDescriptor::Ball { center: vec![0.5, 0.5], radius }, 2.0 * PI * radius),
        ];
        for (shape, region, exact) in shapes {
            let measured = perimeter(&region, &level)?;
            rows.push(PerimeterRow {
                shape,
                level: n,
                h: level.h(),
                measured,
                exact,
                relative_error: (measured - exact).abs() / exact,
            });
        }
    }
    Ok(rows)
}

/// All suites; writes `identities.csv`, `convergence.csv`, `orders.csv`,
/// `density.csv`, `perimeter.csv` and `report.json` into `out`.
pub fn run_checks(config: &CheckConfig, out: &Path) -> Result<RunReport, CliError> {
    let hash = config.hash();
    let out = OutDir::create(out, &hash)?;
    out.write_json("config.json", config)?;
    let t0 = Instant::now();
    let mut inv = Vec::new();

    let mut ident = Vec::new();
    for &dim in &config.identity_dims {
        for n in config.identity_levels.range() {
            let level = build_level(&Domain::unit(dim)?, n)?;
            let seed = config.seed ^ ((dim as u64) << 32 | n as u64);
            let (sbp, gauss) = identity_suite(&level, config.instances, seed)?;
            ident.push(IdentityRow { suite: "sbp", dim, level: n, instances: config.instances, max_relative_defect: sbp });
            ident.push(IdentityRow {
                suite: "gauss",
                dim,
                level: n,
                instances: config.instances,
                max_relative_defect: gauss,
            });
        }
    }
    let mut t = Table::new(&["suite", "dim", "level", "instances", "max_relative_defect"]);
    for r in &ident {
        t.push(vec![r.suite.into(), r.dim.to_string(), r.level.to_string(), r.instances.to_string(), fmt(r.max_relative_defect)]);
    }
    out.write_table("identities.csv", t)?;
    for suite in ["sbp", "gauss"] {
        let worst = ident.iter().filter(|r| r.suite == suite).map(|r| r.max_relative_defect).fold(0.0, f64::max);
        inv.push(Invariant::check(
            &format!("{suite} identity"),
            worst <= config.identity_tol,
            worst,
            format!("<= {}", config.identity_tol),
        ));
    }

    let mut conv: Vec<ConvergenceRow> = Vec::new();
    for n in config.convergence_levels.range() {
        for (study, dim) in [("derivative-1d", 1), ("derivative-2d", 2)] {
            let (h, error) = derivative_error(dim, n)?;
            conv.push(ConvergenceRow { study, level: n, h, error });
        }
        for (study, dim) in [("quadrature-1d", 1), ("quadrature-2d", 2)] {
            let (h, error) = quadrature_error(dim, n)?;
            conv.push(ConvergenceRow { study, level: n, h, error });
        }
    }
    let phi = heaviside_test_function();
    let oracle = heaviside_oracle(&phi);
    for n in config.heaviside_levels.range() {
        let (h, error) = heaviside_error(n, &phi, oracle)?;
        conv.push(ConvergenceRow { study: "heaviside-pairing", level: n, h, error });
    }
    let mut t = Table::new(&["study", "level", "h", "error"]);
    for r in &conv {
        t.push(vec![r.study.into(), r.level.to_string(), fmt(r.h), fmt(r.error)]);
    }
    out.write_table("convergence.csv", t)?;

    let mut orders = Table::new(&["study", "fitted_order", "accepted"]);
    for study in ["derivative-1d", "derivative-2d", "quadrature-1d", "quadrature-2d", "heaviside-pairing"] {
        let (h, e): (Vec<f64>, Vec<f64>) = conv.iter().filter(|r| r.study == study).map(|r| (r.h, r.error)).unzip();
        let p = fitted_order(&h, &e);
        let (ok, accepted) = if study.starts_with("derivative") {
            ((p - 2.0).abs() <= config.order_tol, format!("2 +- {}", config.order_tol))
        } else if study.starts_with("quadrature") {
            (p >= 2.0 - config.quadrature_slack, format!(">= {}", 2.0 - config.quadrature_slack))
        } else {
            (p >= config.heaviside_min_order, format!(">= {}", config.heaviside_min_order))
        };
        orders.push(vec![study.into(), fmt(p), accepted.clone()]);
        inv.push(Invariant::check(&format!("{study} order"), ok, p, accepted));
    }
    out.write_table("orders.csv", orders)?;

    let probes = density_probes()?;
    let mut t = Table::new(&["region", "dim", "probe", "expected", "measured"]);
    for p in &probes {
        t.push(vec![p.region.into(), p.dim.to_string(), p.probe.into(), fmt(p.expected), fmt(p.measured)]);
    }
    out.write_table("density.csv", t)?;
    let worst = probes.iter().map(|p| (p.measured - p.expected).abs()).fold(0.0, f64::max);
    inv.push(Invariant::check("density probes exact", worst == 0.0, worst, "== 0"));

    let per = perimeter_study(config.perimeter_levels, config.disk_radius)?;
    let mut t = Table::new(&["shape", "level", "h", "measured", "exact", "relative_error"]);
    for r in &per {
        t.push(vec![r.shape.into(), r.level.to_string(), fmt(r.h), fmt(r.measured), fmt(r.exact), fmt(r.relative_error)]);
    }
    out.write_table("perimeter.csv", t)?;
    for shape in ["unit-square", "disk"] {
        let rows: Vec<&PerimeterRow> = per.iter().filter(|r| r.shape == shape).collect();
        let fin = rows.last().expect("levels non-empty");
        inv.push(Invariant::check(
            &format!("{shape} perimeter at finest level"),
            fin.relative_error <= config.perimeter_tol,
            fin.relative_error,
            format!("<= {}", config.perimeter_tol),
        ));
        let e: Vec<f64> = rows.iter().map(|r| r.relative_error).collect();
        let first_last = e[e.len() - 1] < e[0];
        inv.push(Invariant::advisory(&format!("{shape} perimeter error decreasing"), first_last, e[e.len() - 1], "finest < coarsest"));
    }

    let status = RunReport::status_for(false, &inv);
    let report = RunReport {
        command: "calculus-check".into(),
        config: serde_json::to_value(config).expect("config serializes"),
        config_hash: hash,
        records: ident.iter().map(|r| serde_json::to_value(r).expect("row serializes")).collect(),
        classification: json!(null),
        invariants: inv,
        timings: json!({ "total_seconds": t0.elapsed().as_secs_f64() }),
        partial: false,
        exit_status: status,
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_order_of_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|v| 3.0 * v * v).collect();
        assert!((fitted_order(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn heaviside_oracle_is_point_value() {
        let phi = heaviside_test_function();
        assert!((heaviside_oracle(&phi) - phi.value(&[HEAVISIDE_JUMP])).abs() < 1e-10);
    }

    #[test]
    fn identities_small() {
        let level = build_level(&Domain::unit(2).unwrap(), 3).unwrap();
        let (sbp, gauss) = identity_suite(&level, 6, 1).unwrap();
        assert!(sbp < 1e-13 && gauss < 1e-13, "{sbp} {gauss}");
    }

    #[test]
    fn density_probes_are_exact() {
        for p in density_probes().unwrap() {
            assert_eq!(p.measured, p.expected, "{p:?}");
        }
    }
}
