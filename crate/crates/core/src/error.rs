use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum SpinError {
    /// An id outside the prompt or answer space.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration; `field` is the dotted key path when known.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    /// Bad call-site argument (empty batch, invalid trajectory, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Enumeration would exceed the configured cap.
    #[error("capacity error: {size} answers exceeds enumeration cap {cap}")]
    Capacity { size: usize, cap: usize },

    /// Runtime failure such as a non-finite loss.
    #[error("run error: {0}")]
    Run(String),

    /// Malformed file contents.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SpinError>;

impl SpinError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SpinError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        SpinError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpinError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            SpinError::Config { .. } => 2,
            _ => 3,
        }
    }
}
