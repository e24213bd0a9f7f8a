use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid cube configuration: {0}")]
    InvalidCube(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("candidate mismatch: expected {expected:#010x}, got {found:#010x}")]
    CandidateMismatch { expected: u32, found: u32 },

    #[error("malformed payload: {0}")]
    Payload(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn payload(msg: impl Into<String>) -> Self {
        Error::Payload(msg.into())
    }
}
