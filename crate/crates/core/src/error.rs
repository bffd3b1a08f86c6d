use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported schema version `{found}` (expected `{expected}`)")]
    Version { found: String, expected: String },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite {term} loss at epoch {epoch}")]
    NonFinite { term: &'static str, epoch: usize },

    #[error("calibration set overlaps the training split ({count} nodes)")]
    CalibrationLeak { count: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Wraps the error with the name of the pipeline stage or command that failed.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Maps a serde_json error onto a byte offset within `text`.
    pub(crate) fn from_json(err: serde_json::Error, text: &str) -> Self {
        let offset = byte_offset(text, err.line(), err.column());
        Error::Parse {
            offset,
            message: err.to_string(),
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.min(l.len());
        }
        offset += l.len();
    }
    text.len()
}
