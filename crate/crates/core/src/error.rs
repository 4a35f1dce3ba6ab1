use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
///
/// [`Error::category`] groups variants the way the command-line tool maps
/// them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("unparseable value `{value}` at row {row}, column `{column}`")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("invalid model specification: {0}")]
    Spec(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    UnsupportedModel,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::MissingColumn(_)
            | Error::MissingValue { .. }
            | Error::BadValue { .. }
            | Error::Shape(_)
            | Error::InvalidData(_)
            | Error::RankDeficient(_)
            | Error::Csv(_) => ErrorCategory::Data,
            Error::Unsupported(_) => ErrorCategory::UnsupportedModel,
            Error::Io(_) | Error::Archive(_) | Error::Json(_) => ErrorCategory::Io,
            Error::Spec(_) | Error::InvalidArgument(_) | Error::Config(_) => ErrorCategory::Usage,
        }
    }
}
