use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("patient `{0}` appears more than once in the labels file")]
    DuplicatePatient(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("patient {patient} token {token}: {field} index {index} out of range (< {bound})")]
    IndexOutOfRange {
        patient: usize,
        token: usize,
        field: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix is not symmetric positive definite ({0})")]
    NotPositiveDefinite(&'static str),
    #[error("supervised training requires at least one labeled patient with tokens")]
    NoLabeledPatients,
    #[error("metric requires both classes to be present")]
    SingleClass,
    #[error("metric requires at least one positive label")]
    NoPositives,
    #[error("no held-out tokens could be scored")]
    NoScoredTokens,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
