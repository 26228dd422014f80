use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: value {value} outside [1, 255]")]
    Range { line: usize, value: i64 },

    #[error("no scaling matrix for {0}")]
    Lookup(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user configuration rather than by
    /// data or the environment.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Lookup(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
