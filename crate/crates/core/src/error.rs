//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by constructions, conversions and evaluations.
#[derive(Debug, Error)]
pub enum Error {
    /// A sequence or count that must be positive was empty or zero.
    #[error("{what} must be positive")]
    Empty { what: &'static str },

    /// Two inputs that must agree in length do not.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A matrix had the wrong number of rows or columns.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A coefficient or parameter was NaN or infinite.
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    /// Division by a power series whose constant term vanishes.
    #[error("power series has zero constant term")]
    ZeroConstantTerm,

    /// Two roots coincide where simple roots are required.
    #[error("repeated root {value} at indices {first} and {second}")]
    RepeatedRoot {
        value: f64,
        first: usize,
        second: usize,
    },

    /// A root is zero where nonzero roots are required.
    #[error("zero root at index {index}")]
    ZeroRoot { index: usize },

    /// A parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A squared norm came out negative, so the parameters cannot describe a real factorization.
    #[error("negative squared norm {value}")]
    NegativeRadicand { value: f64 },

    /// A dense construction would exceed the size cap for test oracles.
    #[error("size {size} exceeds cap {cap}")]
    TooLarge { size: usize, cap: usize },

    /// A noise source ran out of rows.
    #[error("noise source exhausted after {rows} rows")]
    Exhausted { rows: usize },

    /// Malformed file content.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for [`Error::InvalidParameter`].
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the caller's input shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::ZeroConstantTerm
                | Error::RepeatedRoot { .. }
                | Error::ZeroRoot { .. }
                | Error::NegativeRadicand { .. }
        )
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
