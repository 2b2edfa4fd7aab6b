use thiserror::Error;

use crate::model::ModelParameters;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("vocabulary error: unmapped words [{}]", .0.join(", "))]
    Vocabulary(Vec<String>),

    #[error("structure error: {0}")]
    Structure(String),

    /// Training produced a non-finite loss. Carries the last parameters for
    /// which every loss was finite.
    #[error("training error: {message}")]
    Training {
        message: String,
        checkpoint: Box<ModelParameters>,
    },

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("checksum mismatch for tensor `{tensor}`: expected {expected}, found {found}")]
    Checksum {
        tensor: String,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("architecture fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    ///
    /// 2: configuration, 3: data, 4: numeric / training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Compatibility(_)
            | Error::Fingerprint { .. }
            | Error::Dimension(_)
            | Error::State(_) => 2,
            Error::Data(_)
            | Error::Vocabulary(_)
            | Error::Structure(_)
            | Error::Checksum { .. }
            | Error::Version { .. }
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::Numeric(_) | Error::Training { .. } | Error::Optimization(_) => 4,
        }
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
