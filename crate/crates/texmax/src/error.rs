use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or hyperparameter mismatch caught before any compute.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad dataset contents (manifests, labels, annotations).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed on-disk artifact (TXBB/TXHD/PPM). Carries the byte offset
    /// at which parsing failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Non-finite values or diverging optimization.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Violated internal invariant (a bug, not a user error).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code convention used by the CLI: 2 usage, 3 data/format,
    /// 4 numeric, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Format { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Internal(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
