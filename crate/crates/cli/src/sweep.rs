//! `sweep`: runs `solve` over a grid of merge patches applied to a base config.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use ultranet::io::{fmt, Table};

use crate::config::{config_hash, merge_patch, RunConfig};
use crate::report::{Invariant, OutDir, RunReport};
use crate::solve::run_solve;
use crate::{CliError, ExitStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// A run config, possibly incomplete until patched.
    pub base: serde_json::Value,
    /// One merge patch per run.
    pub grid: Vec<serde_json::Value>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let c: SweepConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid sweep config: {e}")))?;
        if c.grid.is_empty() {
            return Err(CliError::Config("sweep grid is empty".into()));
        }
        Ok(c)
    }

    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_string(self).expect("config serializes"))
    }

    /// The patched config of each grid point, with `overrides` applied last.
    pub fn runs(&self, overrides: &serde_json::Value) -> Vec<Result<RunConfig, CliError>> {
        self.grid
            .iter()
            .map(|patch| {
                let mut v = self.base.clone();
                merge_patch(&mut v, patch);
                merge_patch(&mut v, overrides);
                RunConfig::from_json(&v.to_string())
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub run: usize,
    pub patch: String,
    pub status: ExitStatus,
    pub error: Option<String>,
    pub m_finest: Option<f64>,
    pub initial_finest: Option<f64>,
    pub classification: Option<String>,
    pub standard_value: Option<f64>,
    pub run_hash: Option<String>,
}

/// Runs every grid point into `out/run_NNN`; failures are recorded and the
/// sweep continues.
pub fn run_sweep(config: &SweepConfig, overrides: &serde_json::Value, out: &Path) -> Result<RunReport, CliError> {
    let hash = config.hash();
    let out = OutDir::create(out, &hash)?;
    out.write_json("config.json", config)?;
    let t0 = Instant::now();
    let mut rows = Vec::new();
    for (k, run) in config.runs(overrides).into_iter().enumerate() {
        let patch = serde_json::to_string(&config.grid[k]).expect("patch serializes");
        let dir = out.path().join(format!("run_{k:03}"));
        let result = run.and_then(|c| run_solve(&c, &dir));
        let row = match result {
            Ok(s) => {
                let last = s.records.last().expect("non-empty net");
                let class = &s.report.classification["m_n"];
                SweepRow {
                    run: k,
                    patch,
                    status: s.report.exit_status,
                    error: None,
                    m_finest: Some(last.value),
                    initial_finest: Some(last.initial_value),
                    classification: class["kind"].as_str().map(str::to_string),
                    standard_value: class["value"].as_f64(),
                    run_hash: Some(s.report.config_hash.clone()),
                }
            }
            Err(e) => {
                log::warn!("sweep run {k} failed: {e}");
                SweepRow {
                    run: k,
                    patch,
                    status: e.exit_status(),
                    error: Some(e.to_string()),
                    m_finest: None,
                    initial_finest: None,
                    classification: None,
                    standard_value: None,
                    run_hash: None,
                }
            }
        };
        rows.push(row);
    }

    let mut t = Table::new(&[
        "run",
        "patch",
        "exit_code",
        "m_finest",
        "initial_finest",
        "classification",
        "standard_value",
        "run_hash",
        "error",
    ]);
    let o = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    for r in &rows {
        t.push(vec![
            r.run.to_string(),
            r.patch.clone(),
            r.status.code().to_string(),
            o(r.m_finest),
            o(r.initial_finest),
            r.classification.clone().unwrap_or_default(),
            o(r.standard_value),
            r.run_hash.clone().unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    out.write_table("summary.csv", t)?;

    let failed = rows.iter().filter(|r| r.status != ExitStatus::Ok).count();
    let invariants = vec![Invariant::check("all sweep runs succeeded", failed == 0, failed as f64, "0 failed runs")];
    let report = RunReport {
        command: "sweep".into(),
        config: serde_json::to_value(config).expect("config serializes"),
        config_hash: hash,
        records: rows.iter().map(|r| serde_json::to_value(r).expect("row serializes")).collect(),
        classification: json!(null),
        invariants,
        timings: json!({ "total_seconds": t0.elapsed().as_secs_f64() }),
        partial: failed > 0,
        exit_status: if failed > 0 { ExitStatus::Partial } else { ExitStatus::Ok },
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
