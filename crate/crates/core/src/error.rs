use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sequence of length {len} exceeds the oracle cap of {cap}")]
    OracleCap { len: usize, cap: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("depth sequence violates the tree-depth constraints: {0}")]
    Constraint(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "matrix is rank deficient (smallest singular value {smallest:e}, largest {largest:e})"
    )]
    Singular { smallest: f64, largest: f64 },

    #[error("supervised training requires depth annotations, none were found")]
    MissingLabels,

    #[error("sentence {sentence:?} has no sub-token to word alignment")]
    MissingAlignment { sentence: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("truncated input at byte {offset}: expected {expected} more bytes for {what}")]
    Truncated {
        offset: u64,
        expected: usize,
        what: String,
    },

    #[error("annotation error in sentence {sentence:?}: {message}")]
    Annotation { sentence: String, message: String },

    #[error("head cycle in sentence {sentence:?} through token {token}")]
    HeadCycle { sentence: String, token: usize },

    #[error("sentence {sentence:?} has {count} root tokens")]
    MultipleRoots { sentence: String, count: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by unreadable or malformed input data, as
    /// opposed to domain or parameter errors.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Format { .. }
                | Error::Truncated { .. }
                | Error::Annotation { .. }
                | Error::HeadCycle { .. }
                | Error::MultipleRoots { .. }
        )
    }
}
