//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvoError {
    #[error("time {t} lies outside the operator's declared interval [{lo}, {hi}]")]
    OutsideTimeInterval { t: f64, lo: f64, hi: f64 },

    #[error("non-finite {what} at t = {t}, x = {x:?}")]
    NonFinite { what: &'static str, t: f64, x: Vec<f64> },

    #[error("diffusion matrix not symmetric positive definite at t = {t}, x = {x:?}: {detail}")]
    NotPositiveDefinite { t: f64, x: Vec<f64>, detail: String },

    #[error("dimension {dim} unsupported by {engine} (supports up to {max})")]
    UnsupportedDimension { dim: usize, engine: &'static str, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "Picard iteration failed on window [{window_start}, {window_end}] after {bisections} \
         bisections (last contraction ratio {last_ratio:.3}, {iterations} iterations)"
    )]
    PicardFailure {
        window_start: f64,
        window_end: f64,
        bisections: usize,
        iterations: usize,
        last_ratio: f64,
    },

    #[error("unknown benchmark '{0}'")]
    UnknownBenchmark(String),

    #[error("unknown audit '{0}'")]
    UnknownAudit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl EvoError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        EvoError::InvalidArgument(msg.into())
    }
}
