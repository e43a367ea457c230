use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline stages.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} (line {line}): {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("manifest validation failed for dimension `{dimension}`: {detail}")]
    Manifest { dimension: String, detail: String },

    #[error("render error: {0}")]
    Render(String),

    #[error("corpus ingest failed: {0}")]
    Corpus(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("report: {0}")]
    Report(String),

    #[error("{0}")]
    Invalid(String),
}

impl AuditError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, detail: impl Into<String>) -> Self {
        AuditError::Parse {
            path: path.into(),
            line,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AuditError>;
