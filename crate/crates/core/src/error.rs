use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
///
/// Shape mismatches inside the dense kernel are programming errors and panic
/// instead; everything that can be caused by user input lands here.
#[derive(Debug)]
pub enum Error {
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed input text. `line` is 1-based; `column` is 1-based when known.
    Parse { line: usize, column: Option<usize>, message: String },
    /// Invalid configuration or arguments (bad ratio, zero lookback, ...).
    Config(String),
    /// A dataset split is too short for the requested windows.
    TooShort { split: &'static str, have: usize, need: usize },
    /// A non-finite value escaped a computation.
    NonFinite { stage: String },
    /// Checkpoint / dump format violations.
    Format(String),
    /// Checkpoint hyper block does not match the requested configuration.
    HyperMismatch { field: &'static str, expected: String, found: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::Parse { line, column: Some(col), message } => {
                write!(f, "line {line}, column {col}: {message}")
            }
            Error::Parse { line, column: None, message } => write!(f, "line {line}: {message}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::TooShort { split, have, need } => write!(
                f,
                "{split} split too short: {have} steps available, at least {need} required"
            ),
            Error::NonFinite { stage } => write!(f, "non-finite value at {stage}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::HyperMismatch { field, expected, found } => write!(
                f,
                "hyperparameter mismatch on `{field}`: config has {expected}, checkpoint has {found}"
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
