//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error("empty group: subgroup predicate selects no units")]
    EmptyGroup,

    #[error("unknown covariate: {0}")]
    UnknownCovariate(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("sampler initialization failed: {0}")]
    Initialization(String),

    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
