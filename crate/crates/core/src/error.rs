use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can surface. Variants follow the error classes
/// named by each component's contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("capacity exceeded: sequence length {len} > max_seq_len {max}")]
    Capacity { len: usize, max: usize },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("tokenization error: unknown word(s) {words:?}")]
    Tokenization { words: Vec<String> },

    #[error("data error: {0}")]
    Data(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("lookup error: unknown dataset `{name}`; available: {available}")]
    Lookup { name: String, available: String },

    #[error("remote error: {0}")]
    Remote(String),

    #[error("parse error: {message}")]
    Parse { message: String, raw: String },

    #[error("extraction error: expected {expected} attributes, response was {raw:?}")]
    Extraction { expected: usize, raw: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index(_) => "index",
            Error::Contract(_) => "contract",
            Error::NonFinite { .. } => "non_finite",
            Error::Capacity { .. } => "capacity",
            Error::Parameter(_) => "parameter",
            Error::Configuration(_) => "configuration",
            Error::Validation(_) => "validation",
            Error::Tokenization { .. } => "tokenization",
            Error::Data(_) => "data",
            Error::Spec(_) => "spec",
            Error::Lookup { .. } => "lookup",
            Error::Remote(_) => "remote",
            Error::Parse { .. } => "parse",
            Error::Extraction { .. } => "extraction",
            Error::Diverged { .. } => "diverged",
            Error::Usage(_) => "usage",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
