use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An operation contract was violated by the caller (e.g. non-scalar
    /// loss, unsorted gather indices, detached parameter).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An index or codeword is out of its valid range.
    #[error("out of range: {0}")]
    Range(String),

    /// A configuration value is invalid or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Not enough data to perform the operation (e.g. fewer points than
    /// centroids, empty dataset after filtering).
    #[error("insufficient data: {0}")]
    Data(String),

    /// A referenced item is missing from the catalog.
    #[error("catalog error: {0}")]
    Catalog(String),

    /// Malformed input row; carries the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A numeric result is non-finite where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Not enough measured steps for an efficiency aggregate.
    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
