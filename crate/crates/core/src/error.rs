use thiserror::Error;

/// Errors produced by the optimizer library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty subsample")]
    EmptySubsample,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {n} rows")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("non-finite correction pair")]
    NonFinitePair,
    #[error("non-finite input vector")]
    NonFiniteVector,
    #[error("zero step")]
    ZeroStep,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("diverged: reduce eta")]
    Diverged,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("unsupported for {0} loss")]
    Unsupported(&'static str),
    #[error("step size violates delay bound: eta must be < {bound:e}")]
    DelayBound { bound: f64 },
    #[error("malformed script: {0}")]
    Script(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
