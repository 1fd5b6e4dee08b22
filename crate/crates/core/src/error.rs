use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, unsupported version or malformed header.
    #[error("format error: {0}")]
    Format(String),

    /// Payload shorter (or longer) than the header promises.
    #[error("corrupted payload: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("cannot remove an observation from an empty component")]
    Underflow,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("memorization score undefined for examples {0:?}")]
    UndefinedScore(Vec<usize>),

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error("classifier evaluation failed: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Validation(_) => "validation",
            Error::Parameter(_) => "parameter",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Underflow => "underflow",
            Error::Numerical(_) => "numerical",
            Error::Configuration(_) => "configuration",
            Error::UndefinedScore(_) => "undefined_score",
            Error::EmptySubset(_) => "empty_subset",
            Error::Evaluation(_) => "evaluation",
        }
    }
}
