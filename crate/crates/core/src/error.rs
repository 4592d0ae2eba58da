use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("search budget exceeded: {evaluations} evaluations > budget {budget}")]
    BudgetExceeded { evaluations: f64, budget: u64 },

    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    #[error("timeline contains no complete intrusion episode")]
    EmptyTimeline,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
