use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
///
/// The variants map one-to-one onto the CLI exit statuses, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated (shape mismatch,
    /// out-of-range index, non-finite value, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration key was unknown, unparsable, or invalid.
    #[error("config error for `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// A verification oracle rejected the measured statistics.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A persisted file could not be decoded.
    #[error("corrupt file {} at byte offset {offset}: {msg}", path.display())]
    Corrupt {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 contract/config, 2 verification, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config { .. } => 1,
            Error::Verification(_) => 2,
            Error::Io { .. } | Error::Corrupt { .. } => 3,
        }
    }

    /// Prefixes the message with additional context, keeping the variant.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::Verification(m) => Error::Verification(format!("{ctx}: {m}")),
            Error::Config { key, msg } => Error::Config {
                key,
                msg: format!("{ctx}: {msg}"),
            },
            other => other,
        }
    }
}
