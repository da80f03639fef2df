use thiserror::Error;

/// Errors surfaced by configuration loading and node entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("identifier permutation is not a bijection over 0..{0}")]
    InvalidPermutation(usize),

    #[error("message at stream position {0:?} does not carry a valid commit certificate")]
    MissingCertificate(Option<u64>),

    #[error("quanta must share the same size (sender q={sender}, receiver q={receiver})")]
    QuantumMismatch { sender: u64, receiver: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
