use thiserror::Error;

/// Library-wide error type. Variants group failures by how callers should
/// react, and each group carries a stable process exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad request: unknown field, out-of-range parameter, contradictory flags.
    #[error("config error: {0}")]
    Config(String),

    /// Input data cannot be used: missing file, malformed CSV, empty class.
    #[error("data error: {0}")]
    Data(String),

    /// Computation produced or detected a non-finite or impossible value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code contract: 2 config, 3 data or io, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
