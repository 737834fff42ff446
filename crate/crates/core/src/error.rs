use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} index {index} out of range (size {len})")]
    IndexOutOfRange { kind: &'static str, index: usize, len: usize },

    #[error("parameters do not match model family: {0}")]
    ParameterMismatch(String),

    #[error("degenerate success probability {0} (must lie strictly inside (0, 1))")]
    DegenerateProbability(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design is not connected; {} disjoint blocks: {}", .components.len(), .components.join(" | "))]
    Disconnected { components: Vec<String> },

    #[error("quadrature guard exceeded: {work} node-evaluations > {limit}")]
    QuadratureGuard { work: f64, limit: f64 },

    #[error("non-finite integrand value {value} at node {node}")]
    NonFinite { node: f64, value: f64 },

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the error came from reading or writing the filesystem.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
