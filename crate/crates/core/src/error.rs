//! Error type shared across the library.
//!
//! Analysis routines return named error classes rather than panicking so the
//! CLI can map each class to a distinct exit code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// No observations left after filtering; reports would be vacuous.
    #[error("empty-scope: {0}")]
    EmptyScope(String),

    /// An operation needed local time but the unit has no usable timezone.
    #[error("no-timezone: unit {0} has no usable timezone")]
    NoTimezone(String),

    /// Cohort matching produced zero eligible pairs.
    #[error("no-matches: {0}")]
    NoMatches(String),

    /// Inputs were present but held no rows usable for the computation.
    #[error("no-data: {0}")]
    NoData(String),

    /// A statistic is undefined on this input (for example zero variance).
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// The observation does not describe a failure at all.
    #[error("not-a-failure: {0}")]
    NotAFailure(String),

    /// Window/cadence combination cannot form a single full window.
    #[error("window too small: window {window_s}s is below probe cadence {cadence_s}s")]
    WindowTooSmall { window_s: u32, cadence_s: u32 },

    /// A required column is absent from an input file.
    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },

    /// A row failed validation badly enough that the whole run must stop.
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: u64, msg: String },

    /// Bad configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
