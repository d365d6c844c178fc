use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown archetype `{0}`")]
    UnknownArchetype(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("version mismatch: file is v{found}, reader supports v{expected}")]
    Version { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by malformed data or files rather than by the caller.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::Version { .. } | Error::Io(_) | Error::EmptyInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
