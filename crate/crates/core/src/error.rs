//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GincError>;

#[derive(Debug, Error)]
pub enum GincError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("token index {token} out of vocabulary (size {vocab_size})")]
    InvalidToken { token: usize, vocab_size: usize },

    #[error("conditioning sequence has zero probability; posterior undefined")]
    UndefinedPosterior,

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty evaluation group (k={k}, n={n})")]
    EmptyGroup { k: usize, n: usize },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization failed: {0}")]
    Serialization(#[from] serde_json::Error),
}
