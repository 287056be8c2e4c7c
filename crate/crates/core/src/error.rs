use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller violated an API contract (shape mismatch, invalid polygon, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Model definition is inconsistent.
    #[error("model configuration error: {0}")]
    ModelConfig(String),

    /// Run or environment configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Too few or degenerate points for a geometric construction.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Linear solve failure, non-finite state or gradient.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
