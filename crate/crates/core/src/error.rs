//! Crate-wide error type.

use std::fmt;
use std::io;

/// Error for every fallible operation in this crate.
#[derive(Debug)]
pub enum Error {
    /// A precondition on an input value was violated.
    InvalidInput(String),
    /// Operand shapes are incompatible.
    Shape(String),
    /// A tensor contained NaN or infinity where finite values are required.
    NonFinite {
        /// Name of the offending tensor.
        tensor: String,
    },
    /// A text file failed to parse.
    Parse {
        /// 1-based line number.
        line: usize,
        message: String,
    },
    /// A binary container (checkpoint) is malformed.
    Format(String),
    /// Underlying I/O failure.
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFinite { tensor } => write!(f, "non-finite value in tensor '{tensor}'"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Format(msg) => write!(f, "malformed container: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
