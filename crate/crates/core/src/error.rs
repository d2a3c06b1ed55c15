use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Step size above `c2 / (8 M^2)` without the unsafe override.
    #[error("step size {eta} exceeds the moment-bound cap {eta_max}; pass the unsafe flag to run anyway")]
    UnsafeStepSize { eta: f64, eta_max: f64 },

    /// A K-override whose minorization constant is not a valid lower bound.
    #[error("minorization check failed: minimum density ratio {ratio} < 1")]
    Minorization { ratio: f64 },

    #[error("non-finite state at step {step} (state norm {norm})")]
    NumericOverflow { step: u64, norm: f64 },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::UnsafeStepSize { .. } => 3,
            Error::InvalidArgument(_) | Error::Config(_) | Error::Minorization { .. } => 4,
            Error::NumericOverflow { .. } => 5,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
