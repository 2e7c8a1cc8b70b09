use std::path::PathBuf;

/// Errors raised across kernel evaluation, operator fitting, training and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate kernel: sum of |outer weights| is zero")]
    DegenerateKernel,

    #[error("non-finite value in {context} (index {index})")]
    NonFinite { context: &'static str, index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel is not symmetric: |g(x,y) - g(y,x)| = {defect:e}")]
    AsymmetricKernel { defect: f64 },

    #[error("no centers given")]
    EmptyCenters,

    #[error("requested {requested} centers from {available} rows")]
    TooManyCenters { requested: usize, available: usize },

    #[error("degenerate Gram matrix: no singular value above the cutoff")]
    DegenerateGram,

    #[error("operation requires the {0} variant")]
    WrongVariant(&'static str),

    #[error("degenerate eigenfunction {index}: zero norm on the evaluation set")]
    DegenerateEigenfunction { index: usize },

    #[error("degenerate dictionary: zero norm estimate")]
    DegenerateDictionary,

    #[error("model is missing {0}")]
    MissingComponent(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("pruning would remove every primitive")]
    PruneEmpty,

    #[error("trajectory diverged after step {last_finite_step}")]
    Diverged { last_finite_step: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    LossNotFinite {
        epoch: usize,
        batch: usize,
        last_params: Vec<f64>,
    },

    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
