use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// A CSV record that could not be parsed or validated.
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A response value outside the support of the loss, with its row index.
    #[error("row {row}: {message}")]
    Domain { row: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("mean does not exist for alpha = {0} (requires alpha > 1)")]
    MeanUndefined(f64),

    #[error("unsupported document version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) | Error::Version { .. } => ErrorClass::Config,
            Error::Numerical(_) | Error::MeanUndefined(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
