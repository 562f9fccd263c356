//! `solve`: Galerkin net, splitting, problem diagnostics and invariant checks.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use ultranet::calculus::GridFunction;
use ultranet::io::{self, fmt, Table};
use ultranet::net::classify;
use ultranet::problems::{concentration_metric, critical_exponent, extract_interface, talenti_constant};
use ultranet::solver::{default_battery, solve_net, split, verify_euler_lagrange, ProblemSpec, SolveReport, SplitOptions, Splitting};

use crate::config::{BoundaryChoice, DumpMode, PotentialChoice, ProblemConfig, RunConfig};
use crate::report::{Invariant, OutDir, RunReport};
use crate::CliError;

/// Slack for "non-decreasing" concentration: values sit within a few ulps
/// of 1 once the minimizer has concentrated.
pub const CONCENTRATION_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct LevelRecord {
    pub level: u32,
    pub h: f64,
    pub dim: usize,
    pub nodes: usize,
    pub value: f64,
    pub initial_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub start: String,
    pub el_strong_l2: f64,
    pub el_weak_max: f64,
    pub max_abs: f64,
    pub concentration: Option<f64>,
    pub min_abs_u: Option<f64>,
    pub interface_length: Option<f64>,
    pub interface_distance: Option<f64>,
    pub mixed_nodes: Option<usize>,
    pub seconds: f64,
}

/// Everything `solve` computes, kept in memory for callers of the library.
pub struct SolveRun {
    pub config: RunConfig,
    pub spec: ProblemSpec,
    pub net: SolveReport,
    pub splitting: Splitting,
    pub records: Vec<LevelRecord>,
    pub report: RunReport,
}

/// Runs the configured study and writes every output file into `out`.
pub fn run_solve(config: &RunConfig, out: &Path) -> Result<SolveRun, CliError> {
    let config = config.clone().resolved();
    let hash = config.hash();
    let spec = config.build_spec()?;
    let levels = config.level_range();
    let out = OutDir::create(out, &hash)?;
    out.write_json("config.json", &config)?;

    let t0 = Instant::now();
    log::info!("solving {} on levels {}..{}", spec.name, levels.first, levels.last);
    let net = solve_net(&spec, levels.range(), &config.solve_options())?;
    let solve_seconds = t0.elapsed().as_secs_f64();

    let copts = config.classify.options();
    let class = classify(&net.values(), &copts)?;
    let split_opts = SplitOptions {
        classify: copts,
        blowup: config.classify.blowup(),
        battery: default_battery(&spec.domain),
    };
    let splitting = split(&net.minimizers(), &split_opts)?;
    let records = level_records(&config, &spec, &net, &split_opts)?;

    let pairing_classes: Vec<serde_json::Value> = splitting
        .pairings
        .iter()
        .map(|p| {
            let entries = net.results.iter().zip(p).map(|((n, h, _), v)| (n, h, *v)).collect();
            Ok(classify(&ultranet::net::Net::new(entries)?, &copts)?.to_record())
        })
        .collect::<Result<_, CliError>>()?;
    let classification = json!({ "m_n": class.to_record(), "psi_pairings": pairing_classes });

    let invariants = invariants(&config, &spec, &net, &class, &splitting, &records)?;
    let partial = net.partial;
    let status = RunReport::status_for(partial, &invariants);

    write_outputs(&out, &config, &net, &splitting, &records, &classification)?;
    let report = RunReport {
        command: "solve".into(),
        config: serde_json::to_value(&config).expect("config serializes"),
        config_hash: hash,
        records: records.iter().map(|r| serde_json::to_value(r).expect("record serializes")).collect(),
        classification,
        invariants,
        timings: json!({
            "solve_seconds": solve_seconds,
            "total_seconds": t0.elapsed().as_secs_f64(),
            "per_level_seconds": records.iter().map(|r| r.seconds).collect::<Vec<_>>(),
        }),
        partial,
        exit_status: status,
    };
    out.write_json("report.json", &report)?;
    Ok(SolveRun { config, spec, net, splitting, records, report })
}

fn level_records(
    config: &RunConfig,
    spec: &ProblemSpec,
    net: &SolveReport,
    split_opts: &SplitOptions,
) -> Result<Vec<LevelRecord>, CliError> {
    let mut records = Vec::new();
    let x_m = config.potential_minimum()?;
    let midline = 0.5 * (spec.domain.lower()[0] + spec.domain.upper()[0]);
    for (n, h, m) in net.results.iter() {
        let level = m.u.level();
        let f = spec.functional.at_level(level)?;
        let initial_value = f.value(spec.initial(level)?.values())?;
        let el = verify_euler_lagrange(spec, &m.u, &split_opts.battery)?;
        let mut r = LevelRecord {
            level: n,
            h,
            dim: level.dim(),
            nodes: level.node_count(),
            value: m.value,
            initial_value,
            grad_norm: m.grad_norm,
            iterations: m.iterations,
            evaluations: m.evaluations,
            converged: m.converged,
            start: format!("{:?}", m.start),
            el_strong_l2: el.strong_l2,
            el_weak_max: el.weak_max,
            max_abs: m.u.max_abs(),
            concentration: None,
            min_abs_u: None,
            interface_length: None,
            interface_distance: None,
            mixed_nodes: None,
            seconds: m.seconds,
        };
        match &config.problem {
            ProblemConfig::SignPerturbed { concentration_radius, .. } => {
                let exponent = critical_exponent(level.dim())? as f64;
                let centre = x_m.clone().unwrap_or_else(|| {
                    spec.domain.lower().iter().zip(spec.domain.upper()).map(|(a, b)| 0.5 * (a + b)).collect()
                });
                r.concentration = Some(concentration_metric(&m.u, &centre, *concentration_radius, exponent)?);
            }
            ProblemConfig::Singular { .. } => {
                r.min_abs_u = Some(m.u.values().iter().fold(f64::INFINITY, |a, v| a.min(v.abs())));
                let dist = move |x: &[f64]| x[0] - midline;
                let xi = extract_interface(&m.u, Some(&dist))?;
                r.interface_length = Some(xi.interface_measure);
                r.interface_distance = xi.max_reference_distance;
                r.mixed_nodes = Some(xi.mixed.len());
            }
            ProblemConfig::Sawtooth => {}
        }
        records.push(r);
    }
    Ok(records)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Per-level table; timings are left out so the file is reproducible.
pub fn levels_table(records: &[LevelRecord]) -> Table {
    let mut t = Table::new(&[
        "level",
        "h",
        "dim",
        "nodes",
        "m_n",
        "increment",
        "initial_value",
        "grad_norm",
        "iterations",
        "evaluations",
        "converged",
        "start",
        "el_strong_l2",
        "el_weak_max",
        "max_abs_u",
        "concentration",
        "min_abs_u",
        "interface_length",
        "interface_distance",
        "mixed_nodes",
    ]);
    let mut prev: Option<f64> = None;
    for r in records {
        t.push(vec![
            r.level.to_string(),
            fmt(r.h),
            r.dim.to_string(),
            r.nodes.to_string(),
            fmt(r.value),
            prev.map(|p| fmt(r.value - p)).unwrap_or_default(),
            fmt(r.initial_value),
            fmt(r.grad_norm),
            r.iterations.to_string(),
            r.evaluations.to_string(),
            r.converged.to_string(),
            r.start.clone(),
            fmt(r.el_strong_l2),
            fmt(r.el_weak_max),
            fmt(r.max_abs),
            opt(r.concentration),
            opt(r.min_abs_u),
            opt(r.interface_length),
            opt(r.interface_distance),
            r.mixed_nodes.map(|v| v.to_string()).unwrap_or_default(),
        ]);
        prev = Some(r.value);
    }
    t
}

fn write_outputs(
    out: &OutDir,
    config: &RunConfig,
    net: &SolveReport,
    splitting: &Splitting,
    records: &[LevelRecord],
    classification: &serde_json::Value,
) -> Result<(), CliError> {
    out.write_table("levels.csv", levels_table(records))?;

    let w = &splitting.w;
    let level = w.level();
    let mut header: Vec<String> = vec!["node".into()];
    header.extend((0..level.dim()).map(|a| format!("x{a}")));
    header.extend(["w".into(), "class".into()]);
    let mut t = Table { header, rows: Vec::new() };
    for a in 0..level.node_count() {
        let class = if splitting.singular.contains(a) {
            "singular"
        } else if splitting.unclassified.contains(a) {
            "unclassified"
        } else {
            "functional"
        };
        let mut row = vec![a.to_string()];
        row.extend(level.point(a).into_iter().map(fmt));
        row.extend([fmt(w.get(a)), class.to_string()]);
        t.push(row);
    }
    out.write_table("splitting.csv", t)?;

    let mut header: Vec<String> = vec!["level".into(), "h".into(), "psi_l2".into()];
    header.extend((0..splitting.pairings.len()).map(|k| format!("pairing_{k}")));
    let mut t = Table { header, rows: Vec::new() };
    for (i, (n, h, _)) in splitting.psi.iter().enumerate() {
        let mut row = vec![n.to_string(), fmt(h), fmt(splitting.psi_norms[i])];
        row.extend(splitting.pairings.iter().map(|p| fmt(p[i])));
        t.push(row);
    }
    out.write_table("psi.csv", t)?;

    let mut t = Table::new(&["level", "h", "m_n", "psi_l2", "concentration", "interface_length"]);
    for (i, r) in records.iter().enumerate() {
        t.push(vec![
            r.level.to_string(),
            fmt(r.h),
            fmt(r.value),
            fmt(splitting.psi_norms[i]),
            opt(r.concentration),
            opt(r.interface_length),
        ]);
    }
    out.write_table("plot.csv", t)?;
    out.write_json("classification.json", classification)?;

    for (n, _, m) in net.results.iter() {
        dump(out, config.dumps, n, &m.u)?;
    }
    Ok(())
}

fn dump(out: &OutDir, mode: DumpMode, n: u32, u: &GridFunction) -> Result<(), CliError> {
    if matches!(mode, DumpMode::Binary | DumpMode::Both) {
        let mut buf = Vec::new();
        io::write_grid_function_binary(u, &mut buf)?;
        out.write_bytes(&format!("u_L{n}.bin"), &buf)?;
    }
    if matches!(mode, DumpMode::Csv | DumpMode::Both) {
        out.write_table(&format!("u_L{n}.csv"), io::grid_function_table(u))?;
        out.write_table(&format!("nodes_L{n}.csv"), io::node_table(u.level()))?;
    }
    Ok(())
}

fn invariants(
    config: &RunConfig,
    spec: &ProblemSpec,
    net: &SolveReport,
    class: &ultranet::net::Classification,
    splitting: &Splitting,
    records: &[LevelRecord],
) -> Result<Vec<Invariant>, CliError> {
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let last = records.last().expect("net is non-empty");
    let mut inv = vec![Invariant::check(
        "all levels converged",
        records.iter().all(|r| r.converged),
        records.iter().filter(|r| !r.converged).count() as f64,
        "0 unconverged levels",
    )];
    if spec.nested {
        inv.push(Invariant::check(
            "monotone nested minima",
            net.monotone_violations.is_empty(),
            net.monotone_violations.len() as f64,
            "0 violations",
        ));
    }
    if let Some(lb) = spec.lower_bound {
        inv.push(Invariant::check(
            "minima above certified lower bound",
            net.lower_bound_violations.is_empty(),
            values.iter().fold(f64::INFINITY, |a, v| a.min(*v)),
            format!("> {}", fmt(lb)),
        ));
    }
    let scale = records.iter().fold(1.0f64, |a, r| a.max(r.max_abs));
    inv.push(Invariant::check(
        "splitting reconstruction exact",
        splitting.reconstruction_error <= 1e-14 * scale,
        splitting.reconstruction_error,
        format!("<= {}", fmt(1e-14 * scale)),
    ));

    match &config.problem {
        ProblemConfig::Sawtooth => {
            let worst = increments.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
            inv.push(Invariant::check("m_n strictly decreasing", worst < 0.0, worst, "max increment < 0"));
            let net_values = net.values();
            let zero = class.standard_value().is_some()
                && ultranet::net::is_infinitesimal(&net_values, &config.classify.options())?;
            inv.push(Invariant::check(
                "m_n classified Standard(0)",
                zero,
                class.standard_value().unwrap_or(f64::NAN),
                "infinitesimal standard value",
            ));
            let p = class.exponent.unwrap_or(f64::NAN);
            inv.push(Invariant::check("decay exponent 2.0 +- 0.3", (p - 2.0).abs() <= 0.3, p, "[1.7, 2.3]"));
            let wmax = splitting.w.max_abs();
            inv.push(Invariant::check("functional part |w| <= 1e-6", wmax <= 1e-6, wmax, "<= 1e-6"));
            let psi = &splitting.psi_norms;
            let dec = psi.windows(2).all(|w| w[1] < w[0]);
            let fin = *psi.last().expect("non-empty");
            inv.push(Invariant::check("psi norms decreasing", dec, fin, "strictly decreasing"));
            inv.push(Invariant::check("finest psi norm < 1e-2", fin < 1e-2, fin, "< 1e-2"));
        }
        ProblemConfig::SignPerturbed { dim, potential, .. } => {
            let s = talenti_constant(*dim);
            let min = values.iter().fold(f64::INFINITY, |a, v| a.min(*v));
            inv.push(Invariant::check("m_n above Sobolev constant", min > s, min, format!("> {}", fmt(s))));
            if *potential == PotentialChoice::Zero {
                let worst = increments.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
                inv.push(Invariant::check("m_n non-increasing", worst <= 1e-10, worst, "max increment <= 1e-10"));
                let (g0, g1) = (values[0] - s, values[values.len() - 1] - s);
                let drop = (g0 - g1) / g0;
                inv.push(Invariant::check("gap to Sobolev constant shrinks >= 30%", drop >= 0.3, drop, ">= 0.3"));
            }
            if config.potential_minimum()?.is_some() {
                let c: Vec<f64> = records.iter().map(|r| r.concentration.unwrap_or(f64::NAN)).collect();
                let fin = c[c.len() - 1];
                inv.push(Invariant::check("concentration >= 0.9 at finest level", fin >= 0.9, fin, ">= 0.9"));
                let worst = c.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
                inv.push(Invariant::check(
                    "concentration non-decreasing",
                    worst <= CONCENTRATION_SLACK,
                    worst,
                    format!("max decrease <= {CONCENTRATION_SLACK}"),
                ));
                let ratio = splitting.w.max_abs() / last.max_abs;
                inv.push(Invariant::check("|w|_inf <= 1e-3 |u_n|_inf", ratio <= 1e-3, ratio, "<= 1e-3"));
            }
        }
        ProblemConfig::Singular { boundary, .. } => {
            let finest = &net.results.last().2.u;
            let m = last.min_abs_u.unwrap_or(0.0);
            inv.push(Invariant::check("min |u| > 0", m > 0.0, m, "> 0"));
            let energy = last.value.abs().max(1.0);
            inv.push(Invariant::check(
                "weak EL residual <= 1e-6 energy",
                last.el_weak_max <= 1e-6 * energy,
                last.el_weak_max,
                format!("<= {}", fmt(1e-6 * energy)),
            ));
            let xi = extract_interface(finest, None)?;
            let n = finest.values().len();
            let mut seen = vec![0u8; n];
            for set in [&xi.positive, &xi.negative, &xi.mixed] {
                set.indices().iter().for_each(|&a| seen[a] += 1);
            }
            let bad_cover = seen.iter().filter(|&&c| c != 1).count();
            inv.push(Invariant::check("interface sets form a disjoint cover", bad_cover == 0, bad_cover as f64, "0 nodes"));
            let level = finest.level();
            let bad_monad = xi
                .positive
                .indices()
                .iter()
                .filter(|&&a| level.neighborhood(a, 1).iter().any(|&b| finest.get(b) <= 0.0))
                .count()
                + xi
                    .negative
                    .indices()
                    .iter()
                    .filter(|&&a| level.neighborhood(a, 1).iter().any(|&b| finest.get(b) >= 0.0))
                    .count();
            inv.push(Invariant::check("monad sign purity", bad_monad == 0, bad_monad as f64, "0 nodes"));
            if *boundary == BoundaryChoice::Default {
                let h = last.h;
                let d = last.interface_distance.unwrap_or(f64::INFINITY);
                inv.push(Invariant::check("interface within 2h of midline", d <= 2.0 * h, d, format!("<= {}", fmt(2.0 * h))));
                let geodesic: f64 = (1..spec.domain.dim()).map(|a| spec.domain.extent(a)).product();
                let len = last.interface_length.unwrap_or(f64::NAN);
                let rel = (len - geodesic).abs() / geodesic;
                inv.push(Invariant::advisory(
                    "interface measure within 10% of geodesic",
                    rel <= 0.1,
                    rel,
                    "<= 0.1 (conjecture check)",
                ));
            }
        }
    }
    Ok(inv)
}
