use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GamiError>;

#[derive(Debug, Error)]
pub enum GamiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("target column not found: {0}")]
    MissingTarget(String),

    #[error("feature column not found: {0}")]
    MissingFeature(String),

    #[error("invalid value {value:?} at row {row}, column {column:?}: {reason}")]
    InvalidCell {
        row: usize,
        column: String,
        value: String,
        reason: &'static str,
    },

    /// A single-class binary target (or an empty one).
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed model file at byte {offset}: {message}")]
    ModelFormat { offset: usize, message: String },

    #[error("model schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    /// Well-formed model file whose contents are inconsistent.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

impl GamiError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GamiError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GamiError::Io {
            path: path.into(),
            source,
        }
    }
}
