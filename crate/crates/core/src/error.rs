use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or plane dimensions that cannot be combined.
    #[error("shape error: {0}")]
    Shape(String),

    /// Values outside their documented domain (NaN, negative extents, range violations).
    #[error("validation error: {0}")]
    Validation(String),

    /// Mosaic pattern missing, malformed or incompatible with the frame.
    #[error("pattern error: {0}")]
    Pattern(String),

    /// Binary container corruption. `offset` is the byte position where decoding failed.
    #[error("format error at byte {offset}{}: {message}", entry.as_ref().map(|e| format!(" (entry `{e}`)")).unwrap_or_default())]
    Format {
        offset: u64,
        entry: Option<String>,
        message: String,
    },

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    /// Planes of a triplet that are not pixel aligned.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            entry: None,
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's data rather than the environment.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
