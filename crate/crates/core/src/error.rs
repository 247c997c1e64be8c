use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid annotation: {0}")]
    Annotation(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("schema mismatch in {file}: {detail}")]
    SchemaMismatch { file: String, detail: String },

    #[error("foreign key violation in {table}.{column}: {detail}")]
    ForeignKey {
        table: String,
        column: String,
        detail: String,
    },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("no admissible model for table {table}; completion not recommended")]
    NoAdmissibleModel { table: String },

    #[error("merge conflict: {0}")]
    MergeConflict(String),

    #[error("query parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("invalid query: {0}")]
    Query(String),

    #[error("completion failed: {0}")]
    Completion(String),

    #[error("artifact is corrupt: {0}")]
    CorruptArtifact(String),

    #[error("artifact version mismatch: {0}")]
    VersionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit status used by the command-line front end: 1 usage, 2 validation,
    /// 3 training, 4 execution.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Annotation(_)
            | Error::Schema(_)
            | Error::SchemaMismatch { .. }
            | Error::ForeignKey { .. }
            | Error::Parse { .. }
            | Error::Query(_)
            | Error::Csv(_) => 2,
            Error::Encoding(_) | Error::Model(_) | Error::Diverged(_) | Error::MergeConflict(_) => 3,
            Error::NoAdmissibleModel { .. }
            | Error::Completion(_)
            | Error::CorruptArtifact(_)
            | Error::VersionMismatch(_)
            | Error::Io { .. }
            | Error::Serde(_) => 4,
        }
    }
}
