//! Crate-wide error type.

/// Errors produced by the echo-polar kernels.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input (scene, grid, file content) was rejected before processing.
    #[error("invalid input: {0}")]
    Input(String),

    /// A caller violated an operation contract (wrong stage tag, shape
    /// mismatch, missing axis).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The binary container could not be parsed or written.
    #[error("container error: {0}")]
    Container(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: 2 for bad inputs, 3 for contract
    /// violations.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Contract(_) => 3,
            _ => 2,
        }
    }
}
