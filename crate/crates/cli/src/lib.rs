//! Batch front end for the `ultranet` library: configuration, orchestration of
//! solves, sweeps and calculus checks, and result persistence.

pub mod checks;
pub mod config;
pub mod report;
pub mod solve;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(ultranet::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<ultranet::Error> for CliError {
    fn from(e: ultranet::Error) -> Self {
        match e {
            // precondition and budget failures come from the configuration
            ultranet::Error::Usage(msg) => CliError::Config(msg),
            e @ ultranet::Error::Resource { .. } => CliError::Config(e.to_string()),
            e => CliError::Core(e),
        }
    }
}

impl CliError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::Config(_) => ExitStatus::ConfigError,
            _ => ExitStatus::InvariantFailed,
        }
    }
}

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitStatus {
    Ok = 0,
    InvariantFailed = 1,
    ConfigError = 2,
    Partial = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (the global pool when
/// `None`). Without the `parallel` feature everything runs on the caller.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    #[cfg(feature = "parallel")]
    {
        match threads {
            None => Ok(f()),
            Some(0) => Err(CliError::Config("--threads must be positive".into())),
            Some(k) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        if threads == Some(0) {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        Ok(f())
    }
}
