use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hyper-parameters, layer specs, or mismatched architecture.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data that violates an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),

    /// An operation was invoked out of order (e.g. backward without a recorded forward).
    #[error("state error: {0}")]
    State(String),

    /// Malformed checkpoint, feature dump, or record file.
    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    /// Non-finite values surfaced during training.
    #[error("numeric failure at iteration {iteration} in {layer}: {message}")]
    Numeric {
        iteration: u64,
        layer: String,
        message: String,
    },

    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path)
        } else {
            Error::Io { path, source }
        }
    }
}
