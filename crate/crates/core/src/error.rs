use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("file {0} is empty (no header row)")]
    EmptyFile(PathBuf),
    #[error("column \"{0}\" is missing from the CSV header")]
    MissingColumn(String),
    #[error("row {row}, column \"{column}\": cannot parse \"{value}\" as a number")]
    ParseNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column \"{column}\": missing value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}, column \"{column}\": category \"{label}\" was not seen during fitting")]
    UnseenCategory {
        row: usize,
        column: String,
        label: String,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model container: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad user input (schema, config, arguments)
    /// rather than by the computation itself. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::MissingColumn(_)
                | Error::EmptyFile(_)
                | Error::ParseNumeric { .. }
                | Error::MissingValue { .. }
        ) || matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
