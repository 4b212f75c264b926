use thiserror::Error;

use crate::dist::Distribution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called outside its domain (terminated context, missing EOS, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("token index {index} is outside a vocabulary of {size} tokens")]
    UnknownToken { index: usize, size: usize },

    #[error("unknown token symbol {0:?}")]
    UnknownSymbol(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("vocabulary mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("value table is missing {} entries (first: {:?})", .0.len(), .0.first())]
    MissingEntries(Vec<String>),

    #[error("estimator not available for {0}; use the analytic KL bounds instead")]
    UnsupportedEstimator(String),

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        best: Box<Distribution>,
    },

    #[error("enumeration exceeds {limit} nodes")]
    TooLarge { limit: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.into(),
        }
    }

    /// True for failures of an iterative numerical method (as opposed to bad input).
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }
}
