use thiserror::Error;

/// Errors produced by the gate-synthesis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An integrator lost unitarity (or Hermiticity) beyond its accuracy contract.
    #[error("integration accuracy lost: {quantity} drifted by {drift:.3e} (limit {limit:.1e}); use a finer time grid")]
    IntegrationAccuracy {
        quantity: &'static str,
        drift: f64,
        limit: f64,
    },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
