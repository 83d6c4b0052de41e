use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("numerical divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error(
        "ensemble collapse at step {step}: lambda_min(P) = {lambda_min:.3e} below floor {floor:.3e}"
    )]
    Collapse {
        step: usize,
        lambda_min: f64,
        floor: f64,
    },

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("resource limit exceeded: lattice needs {required} bytes, cap is {cap} bytes")]
    Resource { required: usize, cap: usize },

    #[error("unsupported mode: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
