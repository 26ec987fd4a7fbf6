use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expected a {expected} Hz waveform, got {found} Hz")]
    SampleRate { expected: u32, found: u32 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("inputs are not paired: {0}")]
    Unpaired(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid training plan: {0}")]
    Plan(String),

    #[error("domain mismatch: expected {expected}, got {found}")]
    Domain { expected: String, found: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("non-finite loss at task `{task}` step {step}: {detail}")]
    NonFinite { task: String, step: usize, detail: String },

    #[error("training stopped at task `{task}` step {step}; rerun to resume")]
    Interrupted { task: String, step: usize },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Plan(_)
                | Error::SampleRate { .. }
                | Error::Domain { .. }
        )
    }
}
