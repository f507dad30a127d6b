use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("non-finite parameter")]
    NonFinite,
    #[error("unsupported SH coefficient count {0} (expected 1 or 4)")]
    UnsupportedShDegree(usize),
    #[error("rotation quaternion is zero")]
    ZeroRotation,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("no valid pixels")]
    NoValidPixels,
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {kind} at byte {offset}: {msg}")]
    Malformed { kind: &'static str, offset: usize, msg: String },
    #[error("truncated {kind} payload: expected {expected} bytes at offset {offset}, found {found}")]
    Truncated { kind: &'static str, offset: usize, expected: usize, found: usize },
    #[error("unsupported {kind} variant: {msg}")]
    Unsupported { kind: &'static str, msg: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
