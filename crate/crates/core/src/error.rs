use std::path::PathBuf;

use thiserror::Error;

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

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("duplicate key ({firm}, {year})")]
    DuplicateKey { firm: String, year: i64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("column `{column}` is not {expected}")]
    ColumnType {
        column: String,
        expected: &'static str,
    },

    #[error("within transformation did not converge after {sweeps} sweeps (max group mean {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("feature columns do not match training columns (missing: {missing:?}, extra: {extra:?})")]
    ColumnMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("operation requires a fitted random forest, got {0}")]
    NotAForest(String),

    #[error("treatment fully explained by controls (|sum of residual x treatment| = {0:e})")]
    TreatmentExplained(f64),

    #[error("estimating equation has zero score variance; standard error undefined")]
    ZeroVariance,

    #[error("bias decomposition needs the true nuisance functions: {0}")]
    NoTruth(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
