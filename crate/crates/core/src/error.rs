use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A decision-variable distribution collapsed (zero variance or all-zero curve).
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    /// Every Gabor channel fell below the minimum representable frequency.
    #[error("empty channel bank at eccentricity {eccentricity} dva")]
    EmptyBank { eccentricity: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
