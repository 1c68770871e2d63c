use std::fmt;
use std::io;

/// Errors raised by the detection pipelines.
#[derive(Debug)]
pub enum Error {
    /// A required column is absent from a CSV header.
    MissingColumn(String),
    /// A cell holds a value outside its allowed set.
    InvalidValue { row: u64, message: String },
    /// The same document id appears twice in one dataset.
    DuplicateId(String),
    /// Malformed input text (CSV quoting, feature records, model files).
    Parse { position: String, message: String },
    /// Structurally valid input with an impossible layout.
    Format(String),
    /// Operation called with arguments outside its contract.
    Usage(String),
    /// Training data contains fewer than two classes.
    DegenerateClass(String),
    /// Mismatched dimensions between operands.
    Shape { expected: usize, found: usize, context: &'static str },
    /// Token or label index out of range.
    Index { index: usize, len: usize },
    /// A probability distribution failed validation.
    Validation(String),
    /// Components that must agree (tokenizers, feature widths) do not.
    Config(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::MissingColumn(col) => write!(f, "missing required column `{col}`"),
            Error::InvalidValue { row, message } => write!(f, "row {row}: {message}"),
            Error::DuplicateId(id) => write!(f, "duplicate document id `{id}`"),
            Error::Parse { position, message } => write!(f, "parse error at {position}: {message}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::DegenerateClass(msg) => write!(f, "degenerate class distribution: {msg}"),
            Error::Shape { expected, found, context } => {
                write!(f, "shape mismatch in {context}: expected {expected}, found {found}")
            }
            Error::Index { index, len } => write!(f, "index {index} out of range for length {len}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
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

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse {
            position: format!("line {} column {}", err.line(), err.column()),
            message: err.to_string(),
        }
    }
}
