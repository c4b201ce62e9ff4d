use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to map a failure
/// to a CLI exit code: configuration problems exit 2, numerical problems
/// exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite (smallest pivot {min_pivot:e})")]
    NotSpd { min_pivot: f64 },

    #[error("iterate became non-finite at step {step}")]
    NonFinite { step: u64 },

    #[error("sink update out of order: expected step {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },

    #[error("buffer holds {have} iterates, need {need}")]
    InsufficientBuffer { have: usize, need: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("confidence level {level} is not tabulated")]
    LevelNotTabulated { level: f64 },

    #[error("regressor weight a_{index}^2 must be positive, got {value}")]
    ZeroRegressor { index: usize, value: f64 },

    #[error("initialization error x0 - x* must be nonzero")]
    ZeroInitError,

    #[error("closed-form covariance is not available for this model: {0}")]
    NotAvailable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    /// CLI exit code for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
