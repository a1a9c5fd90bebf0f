//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by corpus I/O, model training and metric computation.
#[derive(Debug)]
pub enum Error {
    /// A JSONL line could not be parsed (1-based line number).
    Parse { line: usize, message: String },
    /// A record is missing a required field or has the wrong shape.
    Schema(String),
    /// Two records in one corpus share an id.
    DuplicateId(String),
    /// Unknown scheme, format or out-of-range configuration value.
    Config(String),
    /// A record could not be exported in the requested style (carries the id).
    Export(String),
    /// Paired inputs have mismatched lengths.
    Shape(String),
    /// A metric has no defined value for the given inputs.
    UndefinedMetric(String),
    /// Model training could not proceed.
    Train(String),
    /// An operation required phonemes but the pair has none (carries the id).
    MissingPhonemes(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::DuplicateId(id) => write!(f, "duplicate record id: {id}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Export(id) => write!(f, "cannot export record {id}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Train(msg) => write!(f, "training error: {msg}"),
            Error::MissingPhonemes(id) => write!(f, "record {id} has no phonemes"),
            Error::Io(err) => write!(f, "io error: {err}"),
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

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
