//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in the lab.
#[derive(Debug, Error)]
pub enum DpdError {
    /// Invalid configuration (non-positive sizes, inconsistent fields, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Degenerate input such as an all-zero signal where power is required.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Signal or tensor size does not match what the operation expects.
    #[error("size/shape error: {0}")]
    Shape(String),

    /// File starts with the wrong magic bytes.
    #[error("format error: bad magic (expected {expected:?}, got {got:?})")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },

    /// File ended before the header-declared payload.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Stored checksum does not match the payload.
    #[error("checksum mismatch")]
    ChecksumMismatch,

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Non-finite loss or gradient during training.
    #[error("training divergence: {0}")]
    Divergence(String),

    /// Least-squares basis is numerically rank deficient.
    #[error("conditioning error: {0} (condition estimate {cond:.3e})", cond = .1)]
    Conditioning(String, f64),

    /// Out-of-band reduction has no baseline excess power to compare against.
    #[error("undefined baseline: {0}")]
    UndefinedBaseline(String),

    /// Malformed JSON in a config or manifest.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DpdError {
    /// Process exit code per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            DpdError::Config(_) | DpdError::Json(_) | DpdError::Shape(_) => 2,
            DpdError::Divergence(_) => 3,
            _ => 4,
        }
    }
}
