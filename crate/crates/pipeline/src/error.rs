use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: malformed record: {message}")]
    Malformed { file: PathBuf, line: usize, message: String },

    #[error("{file}:{line}: invalid field `{field}`: {message}")]
    InvalidField { file: PathBuf, line: usize, field: String, message: String },

    #[error("referential integrity violation: {0}")]
    Integrity(String),

    #[error("merge table contains a cycle through `{0}`")]
    MergeCycle(String),

    #[error("part class `{0}` has no training instances")]
    EmptyPartClass(String),

    #[error("missing occluded flags; the objects file must carry an `occluded` column")]
    MissingOccludedFlags,

    #[error("missing upstream artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("regressor error: {0}")]
    Regressor(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<partctx_core::regressor::RegressorError> for PipelineError {
    fn from(e: partctx_core::regressor::RegressorError) -> Self {
        PipelineError::Regressor(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
