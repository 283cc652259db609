//! Error type shared across the pipeline.

use thiserror::Error;

/// Coarse failure category, used by callers that map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Bad configuration file or conflicting options.
    Config,
    /// Malformed input data or on-disk format.
    Data,
    /// Numeric failure: divergence, non-finite loss, or graph misuse.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not admit the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Misuse of the computation graph (double backward, non-scalar loss).
    #[error("graph error: {0}")]
    Graph(String),

    /// Configuration file problem: unknown key, missing key, bad value.
    #[error("config error: {0}")]
    Config(String),

    /// On-disk format violation (array container, checkpoint, interchange).
    #[error("format error: {0}")]
    Format(String),

    /// Dataset-level problem: missing modality, degenerate skeleton, short stream.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric divergence or loss of finiteness during training.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Shape(_) | Error::Format(_) | Error::Data(_) | Error::Io(_) => Category::Data,
            Error::Graph(_) | Error::Numeric(_) => Category::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
