use thiserror::Error;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid compressor: {0}")]
    InvalidCompressor(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid stepsize input: {0}")]
    InvalidStepsize(String),

    /// Zero subgradient reported while the function gap is still positive.
    /// A Polyak stepsize cannot be formed from such an oracle.
    #[error("degenerate oracle: zero subgradient with positive gap {gap}")]
    DegenerateOracle { gap: f64 },

    #[error("every tuning run diverged for {0}")]
    AllDiverged(String),

    #[error("no input curves")]
    EmptyReport,

    #[error("malformed metrics csv {path}: {reason}")]
    MalformedCsv { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
