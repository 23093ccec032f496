use thiserror::Error;

/// Errors raised by configuration, analysis and I/O paths of the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("trace inconsistent with the schedule: {0}")]
    Corruption(String),

    #[error("proof tree structure violated: {0}")]
    StructuralViolation(String),

    #[error("honest channel protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("channel transport failed: {0}")]
    Transport(String),

    #[error("simulator failed: {0}")]
    Simulator(String),

    #[error("fixture `{name}` failed: {reason}")]
    Fixture { name: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
