use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class: 1 for contract/validation failures on
    /// inputs, 2 for failures at run time (io, numerics).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::DimMismatch(_)
            | Error::ZeroNorm(_)
            | Error::UndefinedCorrelation(_) => 1,
            Error::Io { .. } | Error::NonFinite(_) => 2,
        }
    }
}
