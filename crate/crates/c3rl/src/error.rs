use thiserror::Error;

/// Errors surfaced at the data / config / runner boundaries. Tensor shape
/// violations are programming-contract panics, not `Error`s.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Capability(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}
