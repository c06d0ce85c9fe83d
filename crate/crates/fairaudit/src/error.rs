//! Error types shared across the audit pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AuditError>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("ingestion error in {file} line {line}: {message}")]
    Ingest {
        file: String,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("unsatisfiable sampling target: {0}")]
    UnsatisfiableTarget(String),

    #[error("cohort size {0} is below the 12-cell demographic grid")]
    CohortSize(usize),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
