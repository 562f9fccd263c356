//! Run reports and the output directory writer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use ultranet::io::Table;

use crate::{CliError, ExitStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported but never fails the run.
    Warn,
}

#[derive(Clone, Debug, Serialize)]
pub struct Invariant {
    pub name: String,
    pub verdict: Verdict,
    pub measured: f64,
    pub threshold: String,
}

impl Invariant {
    pub fn check(name: &str, ok: bool, measured: f64, threshold: impl Into<String>) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Invariant { name: name.into(), verdict, measured, threshold: threshold.into() }
    }

    /// Like [`Invariant::check`] but downgrades failure to a warning.
    pub fn advisory(name: &str, ok: bool, measured: f64, threshold: impl Into<String>) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Warn };
        Invariant { name: name.into(), verdict, measured, threshold: threshold.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub records: Vec<serde_json::Value>,
    pub classification: serde_json::Value,
    pub invariants: Vec<Invariant>,
    pub timings: serde_json::Value,
    pub partial: bool,
    pub exit_status: ExitStatus,
}

impl RunReport {
    /// Partial convergence wins over invariant failures: a failed check on an
    /// unconverged net says little about the method.
    pub fn status_for(partial: bool, invariants: &[Invariant]) -> ExitStatus {
        if partial {
            ExitStatus::Partial
        } else if invariants.iter().any(|i| i.verdict == Verdict::Fail) {
            ExitStatus::InvariantFailed
        } else {
            ExitStatus::Ok
        }
    }

    pub fn failures(&self) -> Vec<&Invariant> {
        self.invariants.iter().filter(|i| i.verdict == Verdict::Fail).collect()
    }

    pub fn invariant(&self, name: &str) -> Option<&Invariant> {
        self.invariants.iter().find(|i| i.name == name)
    }

    pub fn invariant_table(&self) -> Table {
        let mut t = Table::new(&["invariant", "verdict", "measured", "threshold"]);
        for i in &self.invariants {
            let v = serde_json::to_value(i.verdict).expect("verdict serializes");
            t.push(vec![
                i.name.clone(),
                v.as_str().unwrap_or_default().to_string(),
                ultranet::io::fmt(i.measured),
                i.threshold.clone(),
            ]);
        }
        t
    }
}

/// Output directory; every CSV written through it gets a `config_hash` column.
pub struct OutDir {
    root: PathBuf,
    hash: String,
}

impl OutDir {
    /// Creates `root` if its parent exists.
    pub fn create(root: &Path, hash: &str) -> Result<Self, CliError> {
        if !root.is_dir() {
            let parent_ok = root.parent().map(|p| p.as_os_str().is_empty() || p.is_dir()).unwrap_or(false);
            if !parent_ok {
                return Err(CliError::Config(format!("output directory {} does not exist", root.display())));
            }
            fs::create_dir(root)
                .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", root.display())))?;
        }
        let probe = root.join(".write-test");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf(), hash: hash.to_string() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn subdir(&self, name: &str, hash: &str) -> Result<OutDir, CliError> {
        OutDir::create(&self.root.join(name), hash)
    }

    fn io(&self, name: &str, e: std::io::Error) -> CliError {
        CliError::Io { path: self.root.join(name).display().to_string(), source: e }
    }

    pub fn write_table(&self, name: &str, table: Table) -> Result<(), CliError> {
        let t = table.with_constant_column("config_hash", &self.hash);
        let text = t.to_csv_string().map_err(CliError::Core)?;
        fs::write(self.root.join(name), text).map_err(|e| self.io(name, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        fs::write(self.root.join(name), text + "\n").map_err(|e| self.io(name, e))
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.root.join(name), bytes).map_err(|e| self.io(name, e))
    }
}
