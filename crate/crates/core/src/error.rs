use std::io;
use std::path::PathBuf;

/// Errors produced by the simulation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cell index {index} out of range for {cells} cells")]
    IndexOutOfRange { index: usize, cells: usize },
    #[error("set is not contained in the occupied cells (cell {0})")]
    NotSubset(usize),
    #[error("malformed box: {0}")]
    MalformedBox(String),
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("graph has no vertices")]
    Empty,
    #[error("vertex cap exceeded: {vertices} > {cap}")]
    CapExceeded { vertices: usize, cap: usize },
    #[error("numerical degeneracy: {0}")]
    Numerical(String),
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("integer overflow: {0}")]
    Overflow(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("grid file format: {0}")]
    Format(String),
    #[error("i/o error at {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
