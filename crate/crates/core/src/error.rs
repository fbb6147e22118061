//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("{stage}: {source} (session {session})")]
    Stage {
        stage: &'static str,
        session: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Tag an error with the pipeline stage and session it came from.
    pub fn in_stage(self, stage: &'static str, session: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            session: session.into(),
            source: Box::new(self),
        }
    }
}
