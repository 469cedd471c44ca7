use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("distribution does not sum to 1 (sum = {0})")]
    NotNormalized(f64),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("off-policy episode: generated by params {episode}, current params {current}")]
    OffPolicy { episode: String, current: String },

    #[error("episode is not terminated")]
    Unterminated,

    #[error("vocab hash mismatch: {0}")]
    VocabMismatch(String),

    #[error("missing stage `{stage}`: expected checkpoint at {}", path.display())]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error is a configuration problem (as opposed to data or IO).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingStage { .. } | Error::VocabMismatch(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
