use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("map file format: {0}")]
    Format(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("need at least {needed} correspondences, got {got}")]
    Arity { needed: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Rank(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by numeric breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Rank(_) | Error::Init(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
