use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver failed after {iterations} iterations (last residual {residual:.3e}): {context}")]
    SolverFailure {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("dictionary format: {0}")]
    Format(String),

    #[error("checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
