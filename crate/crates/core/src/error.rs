//! Error type shared across the crate.

/// Errors produced anywhere in the forecasting pipeline.
///
/// The variants are grouped by how the CLI maps them to exit codes:
/// configuration problems, data/ingestion problems, and numerical or
/// domain failures inside the models.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear solve, optimization, or iteration failed numerically.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A density or model collapsed (no mass on the support, no bases left).
    #[error("degenerate model: {0}")]
    Degenerate(String),

    /// A malformed row in an input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Timestamps out of order in an input file.
    #[error("ordering error: {0}")]
    Ordering(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Structurally valid input that cannot be used (empty partitions,
    /// constant features, mismatched lengths).
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
