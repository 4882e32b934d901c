use std::path::PathBuf;

use thiserror::Error;

/// A malformed data row. Rows that fail are reported and skipped; they never
/// abort a parse on their own.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("row {row}: field `{field}`: {message} (raw: {raw:?})")]
pub struct RecordError {
    /// 1-based data row number (the header is row 0).
    pub row: u64,
    pub field: String,
    pub raw: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Record(#[from] RecordError),

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a pipeline stage label, unless one is already present.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad inputs or configuration rather than a
    /// failure while executing a stage. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Record(_)
                | Error::DuplicateId { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::Lookup(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
