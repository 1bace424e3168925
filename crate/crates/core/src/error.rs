use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("record {index}: field `{field}`: {reason}")]
    Record {
        index: usize,
        field: &'static str,
        reason: String,
    },

    #[error("sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },

    #[error("cannot split {0} samples: at least 10 are required")]
    TooFewSamples(usize),

    #[error("byte offset {offset} is outside text of length {len}")]
    OffsetOutOfRange { offset: usize, len: usize },

    #[error("syntax error at line {line}, column {column} (byte {offset})")]
    Syntax { offset: usize, line: usize, column: usize },

    #[error("unsupported language `{0}`")]
    UnsupportedLanguage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("malformed tree: {0}")]
    Structure(String),

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{stage} diverged at step {step}: loss {loss}")]
    Diverged {
        stage: &'static str,
        step: usize,
        loss: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input data or arguments rather than by a failure
    /// while computing.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Diverged { .. })
    }
}
