use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by tensor arithmetic and the autodiff engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },
    #[error("numeric guard in {op}: {detail}")]
    NumericGuard { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty tensor passed to {0}")]
    Empty(&'static str),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn geometry(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Geometry { op, detail: detail.into() }
    }

    pub(crate) fn guard(op: &'static str, detail: impl Into<String>) -> Self {
        Self::NumericGuard { op, detail: detail.into() }
    }
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error("truncated input at byte offset {offset}: {missing} more bytes needed")]
    Truncated { offset: u64, missing: u64 },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("image error on {path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Short machine-readable tag for this error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(TensorError::Dimension { .. }) => "dimension",
            Error::Tensor(TensorError::Geometry { .. }) => "geometry",
            Error::Tensor(TensorError::NumericGuard { .. }) => "numeric",
            Error::Tensor(TensorError::Contract(_)) => "contract",
            Error::Tensor(TensorError::Empty(_)) => "empty",
            Error::Io { .. } => "io",
            Error::Format { .. } | Error::Truncated { .. } => "format",
            Error::Version { .. } | Error::Architecture(_) => "version",
            Error::Image { .. } => "image",
            Error::Config(_) => "config",
            Error::EmptyCorpus(_) => "corpus",
            Error::NonFiniteGradient { .. } => "gradient",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
