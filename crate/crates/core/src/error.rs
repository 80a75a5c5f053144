use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("critic diverged: value {0} is not finite")]
    CriticDivergence(f64),

    #[error("episode is done; call reset before stepping")]
    EpisodeDone,

    #[error("{what} did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("dead-end region contains a cycle through state {0} that never reaches failure")]
    DeadEndCycle(usize),

    #[error("training diverged at step {step}: loss {loss} exceeded 10x the initial loss for too long")]
    Divergence { step: usize, loss: f64 },

    #[error("environment error at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint descriptor mismatch: expected `{expected}`, found `{found}`")]
    DescriptorMismatch { expected: String, found: String },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
