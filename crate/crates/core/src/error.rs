use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty waveform")]
    EmptyWaveform,

    #[error("clip too short: {samples} samples, need at least {window}")]
    ClipTooShort { samples: usize, window: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no audio files found under {0}")]
    NoAudioFiles(PathBuf),

    #[error("degenerate dataset statistics (std == 0)")]
    DegenerateStats,

    #[error("degenerate batch (std == 0)")]
    DegenerateBatch,

    #[error("batch norm undefined for a batch of one in training mode")]
    BatchNormUndefined,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step}: {diagnostic}")]
    NonFiniteLoss { step: u64, diagnostic: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("incompatible checkpoint format version {found} (expected {expected})")]
    IncompatibleCheckpoint { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for errors caused by bad user input rather than a bug or I/O fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_))
    }
}
