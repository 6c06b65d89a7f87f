//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading, validating or evaluating.
///
/// All variants name the offending field (and file, where one is involved) so
/// callers can surface actionable messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("length mismatch in `{field}`: expected {expected}, got {actual}")]
    LengthMismatch {
        field: String,
        expected: usize,
        actual: usize,
    },

    /// Invariant violation on a named field (non-finite value, negative
    /// depth, unsorted indices, out-of-range score, ...).
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("empty index set passed to {operation}")]
    EmptyIndexSet { operation: &'static str },

    #[error("rows passed to {operation} must each sum to 1 (row {row} does not)")]
    NotNormalized { operation: &'static str, row: usize },

    #[error("proposals overlap: point {point} appears in more than one proposal")]
    OverlappingProposals { point: usize },

    #[error("proposal is missing per-point confidences")]
    MissingConfidences,
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn length_mismatch(field: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::LengthMismatch {
            field: field.into(),
            expected,
            actual,
        }
    }
}
