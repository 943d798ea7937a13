use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed a value outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An operation was invoked in a state that cannot serve it
    /// (missing forward context, loss not recorded on the tape, ...).
    #[error("invalid state: {0}")]
    State(String),

    /// A model, pipeline or run configuration violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context: format!("{}", path.into().display()),
            source,
        }
    }
}
