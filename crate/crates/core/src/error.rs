use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed schema file: {0}")]
    SchemaParse(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("unknown column `{table}.{column}`")]
    UnknownColumn { table: String, column: String },

    #[error("table `{table}`: {message}")]
    Csv { table: String, message: String },

    #[error("table `{table}`: header mismatch, expected columns {expected:?}, found {found:?}")]
    HeaderMismatch {
        table: String,
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("table `{table}`, column `{column}`, row {row}: `{token}` is not a number")]
    BadNumber {
        table: String,
        column: String,
        row: usize,
        token: String,
    },

    #[error("no key index on `{table}.{column}`")]
    MissingIndex { table: String, column: String },

    #[error("`{table}.{column}` is a key column and has no attribute values")]
    KeyAttribute { table: String, column: String },

    #[error("hop starts at `{found}` but the instantiation ends at `{expected}`")]
    TerminalMismatch { expected: String, found: String },

    #[error("target table `{0}` has no rows")]
    EmptyTargetTable(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("entropy of an all-zero class distribution")]
    EmptyDistribution,

    #[error("malformed model document: {0}")]
    ModelFormat(String),

    #[error("model format version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("database schema fingerprint {found} does not match the model's {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("memory budget of {budget} cells exceeded while materializing `{path}`")]
    MemoryBudget { path: String, budget: usize },

    #[error("cross-validation: {0}")]
    Folds(String),

    #[error("generator: {0}")]
    Generator(String),

    #[error("{0}")]
    InvalidParams(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
