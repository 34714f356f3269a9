use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("degenerate flow field: {valid} of {total} pixels valid")]
    DegenerateFlow { valid: usize, total: usize },

    #[error("foresight transport failure: {0}")]
    Transport(String),

    #[error("malformed log: {0}")]
    MalformedLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
