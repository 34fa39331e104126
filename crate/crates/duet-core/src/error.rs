use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the solver library and its file formats.
#[derive(Debug, Error)]
pub enum DuetError {
    /// Inputs violate a documented precondition or type invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A likelihood or algebraic quantity left its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A text format could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// File system failure, annotated with the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DuetError>;

impl DuetError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DuetError::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        DuetError::Domain(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        DuetError::Parse { line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DuetError::Io { path: path.into(), source }
    }
}
