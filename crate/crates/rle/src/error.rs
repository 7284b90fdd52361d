//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, evaluation, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A coupling scale net produced |log-scale| beyond the overflow guard.
    #[error("divergent scale net: max |log-scale| {max_abs:.3} exceeds guard {guard}")]
    DivergentScale { max_abs: f64, guard: f64 },

    /// A predicted scale left its admissible range.
    #[error("sigma out of range: {0}")]
    SigmaOutOfRange(String),

    /// A backward pass was handed a cache from a mismatched forward pass.
    #[error("stale activation cache: {0}")]
    StaleCache(String),

    /// Invalid configuration or input document.
    #[error("invalid config: {0}")]
    Config(String),

    /// Empty dataset / batch where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),

    /// Grid quadrature could not produce a usable value.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether this error signals a numerical blow-up (CLI exit code 3)
    /// rather than a usage/config problem (exit code 2).
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::DivergentScale { .. } | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
