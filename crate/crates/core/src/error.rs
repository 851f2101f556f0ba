use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("AUC undefined: {0}")]
    AucUndefined(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message with where the error happened, keeping the kind.
    pub fn context(self, stage: impl std::fmt::Display) -> Self {
        let wrap = |m: String| format!("{stage}: {m}");
        match self {
            Error::Shape(m) => Error::Shape(wrap(m)),
            Error::Config(m) => Error::Config(wrap(m)),
            Error::Validation(m) => Error::Validation(wrap(m)),
            Error::AucUndefined(m) => Error::AucUndefined(wrap(m)),
            Error::DegenerateWeights(m) => Error::DegenerateWeights(wrap(m)),
            Error::Training(m) => Error::Training(wrap(m)),
            Error::Search(m) => Error::Search(wrap(m)),
            Error::Data(m) => Error::Data(wrap(m)),
            Error::Format(m) => Error::Format(wrap(m)),
            io @ Error::Io { .. } => io,
        }
    }

    /// Short stage tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::AucUndefined(_) => "auc_undefined",
            Error::DegenerateWeights(_) => "degenerate_weights",
            Error::Training(_) => "training",
            Error::Search(_) => "search",
            Error::Data(_) => "data",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
        }
    }
}
