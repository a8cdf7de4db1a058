//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad templates, mismatched shapes, unknown keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The query budget ran out before the requested work finished.
    #[error("query budget exhausted ({used}/{max} queries used)")]
    BudgetExhausted { used: u64, max: u64 },

    /// The victim endpoint could not be reached after retries.
    #[error("victim unavailable: {0}")]
    VictimUnavailable(String),

    /// The victim answered but the answer maps to no known label word.
    #[error("unparseable victim response: {0:?}")]
    UnparseableResponse(String),

    /// A checkpoint could not be restored (version or vocabulary mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A policy update produced NaN or infinite gradients; parameters were
    /// left untouched.
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, Error::BudgetExhausted { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
