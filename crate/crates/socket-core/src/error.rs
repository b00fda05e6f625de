//! Error type shared across the crate.

/// Errors produced by table construction, scoring, attention and file I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter {
        name: &'static str,
        message: String,
    },

    /// Vector or matrix dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Two sides of an operation were built with different table counts.
    #[error("table count mismatch: {left} vs {right}")]
    TableCountMismatch { left: usize, right: usize },

    /// Every key is masked (or the cache is empty); nothing can be selected.
    #[error("no selectable keys")]
    NoSelectableKeys,

    /// The selection budget exceeds the number of selectable keys.
    #[error("budget {budget} exceeds {selectable} selectable keys")]
    BudgetExceedsSelectable { budget: usize, selectable: usize },

    /// The angular kernel is undefined for zero-norm vectors.
    #[error("zero-norm {kind} at index {index}")]
    ZeroNorm { kind: &'static str, index: usize },

    /// A normalizer that must be positive came out zero.
    #[error("degenerate normalizer in {context}")]
    DegenerateNormalizer { context: &'static str },

    /// A binary or JSON input failed to parse.
    #[error("malformed {format} data: {message}")]
    Malformed {
        format: &'static str,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn malformed(format: &'static str, message: impl Into<String>) -> Self {
        Error::Malformed {
            format,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
