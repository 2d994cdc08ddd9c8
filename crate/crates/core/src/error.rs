use std::path::PathBuf;

use thiserror::Error;

use crate::optim::OptimError;

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
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{column}` row {row}: value `{value}` is not binary (0/1)")]
    NonBinary {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{column}` row {row}: cannot parse `{value}` as a number")]
    BadNumber {
        column: String,
        row: usize,
        value: String,
    },
    #[error("chosen unavailable: person {person}, situation {situation}")]
    ChosenUnavailable { person: String, situation: String },
    #[error("ragged input: {0}")]
    Ragged(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("zero-variance column `{0}` cannot be standardized")]
    ZeroVariance(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("covariance factorization failed for class {class} even with ridge {ridge:e}")]
    Factorization { class: usize, ridge: f64 },
    #[error("class {class} vanished (effective size {size:e})")]
    EmptyClass { class: usize, size: f64 },
    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),
    #[error("optimizer failure: {0}")]
    Optim(#[from] OptimError),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
