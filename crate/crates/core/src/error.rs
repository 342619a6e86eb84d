use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("node {0} was recorded without gradient tracking")]
    NotRecorded(usize),

    #[error(
        "line search failed after {backtracks} backtracks at iteration {iteration}: \
         <d,g> = {slope:e}, |d| = {d_norm:e}, |g| = {g_norm:e}"
    )]
    LineSearchFailure {
        iteration: usize,
        backtracks: usize,
        slope: f64,
        d_norm: f64,
        g_norm: f64,
    },

    #[error("cone membership violated: {0}")]
    ConeViolation(String),

    #[error("no smoothness certificate available for {0}")]
    MissingCertificate(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("model manifest mismatch: expected {expected}, found {found}")]
    Manifest { expected: String, found: String },

    #[error("malformed puzzle: {0}")]
    Puzzle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
