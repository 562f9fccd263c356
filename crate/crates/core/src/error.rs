use thiserror::Error;

/// Errors raised by grid construction, calculus and the solver.
#[derive(Debug, Error)]
pub enum Error {
    /// The requested level would exceed the configured node budget.
    #[error("level {level} needs {nodes} nodes, above the cap of {cap}")]
    Resource { level: u32, nodes: usize, cap: usize },

    /// A caller violated an operation precondition.
    #[error("{0}")]
    Usage(String),

    /// A user supplied function produced a non-finite value.
    #[error("non-finite value {value} at node {node} ({coords:?})")]
    Evaluation {
        node: usize,
        coords: Vec<f64>,
        value: f64,
    },

    /// Two grid objects belong to different levels.
    #[error("grid level mismatch: {0}")]
    LevelMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
