//! Error type shared across the library.
//!
//! Variants are grouped by how a caller should react: `Usage` means the call
//! itself was malformed, `Schema`/`Data` mean the input files are bad, and
//! `Numerical` means training blew up and the run must abort.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape disagreement between two operands, e.g. a matrix-vector product
    /// where the vector length does not match the column count.
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// The requested operation does not make sense (bad argument combination,
    /// node not on the tape, label/mode mismatch, ...).
    #[error("usage: {0}")]
    Usage(String),

    /// Schema definition or inference problem.
    #[error("schema: {0}")]
    Schema(String),

    /// Malformed input data. `row` is 1-based and counts the header line.
    #[error("data error at row {row}: {msg}")]
    Data { row: usize, msg: String },

    /// Model container is corrupt or from an incompatible writer.
    #[error("container: {0}")]
    Format(String),

    /// Training produced a non-finite loss or an otherwise unusable state.
    #[error("numerical: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
