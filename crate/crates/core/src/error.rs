use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants map onto the CLI exit codes: `Data` and `Io` are data errors,
/// `Numerical` is a numerical failure and `Config` is a usage error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure at {context}: {message}")]
    Numerical { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix the context of a numerical error, leaving other variants alone.
    pub fn within(self, outer: impl AsRef<str>) -> Self {
        match self {
            Error::Numerical { context, message } => Error::Numerical {
                context: format!("{}, {}", outer.as_ref(), context),
                message,
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io { .. } | Error::Json { .. } => 2,
            Error::Numerical { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
