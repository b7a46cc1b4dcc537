//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: configuration
//! and flag misuse (1), data/format problems (2), numeric failures (3).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operation received incompatible operand shapes.
    #[error("{op}: incompatible shapes {}x{} and {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// An operation produced NaN or Inf from finite inputs.
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    /// Tape misuse: backward called twice, non-scalar loss, invalid id.
    #[error("tape: {0}")]
    Tape(String),

    /// Schema file or schema/data contract violation.
    #[error("schema: {0}")]
    Schema(String),

    /// Malformed or inconsistent input data.
    #[error("data: {0}")]
    Data(String),

    /// Versioned artifact (transform, checkpoint, graph export) violation.
    #[error("format: {0}")]
    Format(String),

    /// Bad configuration value or flag usage.
    #[error("config: {0}")]
    Config(String),

    /// Training or evaluation diverged (NaN loss, exploding values).
    #[error("numeric: {0}")]
    Numeric(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite { .. } | Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
