use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QsarError>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by what a caller can do about them: data problems
/// (bad input files), configuration problems (bad parameters) and numerical
/// failures (the data is well formed but the requested model cannot be
/// computed). [`QsarError::exit_code`] maps those groups onto process exit
/// codes.
#[derive(Debug, Error)]
pub enum QsarError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': cannot read '{value}' as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty matrix: {0}")]
    EmptyMatrix(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("descriptor matrix is rank deficient (rank {rank} < {columns} columns); use PCR or PLS instead of MLR")]
    Singular { rank: usize, columns: usize },

    #[error("underdetermined system: {rows} observations cannot fit {columns} descriptors plus an intercept")]
    Underdetermined { rows: usize, columns: usize },

    #[error("PLS component {component} collapsed (zero-norm weight vector)")]
    Extraction { component: usize },

    #[error("leave-one-out fold for molecule '{molecule}' failed: {source}")]
    Fold {
        molecule: String,
        #[source]
        source: Box<QsarError>,
    },

    #[error("degenerate test set: observed test activities have zero spread around the training mean")]
    DegenerateTestSet,

    #[error("degenerate distribution: standard deviation is zero")]
    DegenerateDistribution,

    #[error("contributions undefined: all scaled coefficients are zero")]
    UndefinedContribution,

    #[error("unknown fixture '{0}' (expected PLS-Eq5, MLR-Eq6 or PCR-Eq7)")]
    Lookup(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl QsarError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QsarError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            QsarError::Config(_) | QsarError::Lookup(_) => 1,
            QsarError::Io { .. }
            | QsarError::Csv(_)
            | QsarError::Schema(_)
            | QsarError::Parse { .. }
            | QsarError::Validation(_)
            | QsarError::Domain(_)
            | QsarError::EmptyMatrix(_)
            | QsarError::Size(_)
            | QsarError::Serialization(_) => 2,
            QsarError::Calibration(_)
            | QsarError::Singular { .. }
            | QsarError::Underdetermined { .. }
            | QsarError::Extraction { .. }
            | QsarError::Fold { .. }
            | QsarError::DegenerateTestSet
            | QsarError::DegenerateDistribution
            | QsarError::UndefinedContribution => 3,
        }
    }
}

impl From<serde_json::Error> for QsarError {
    fn from(e: serde_json::Error) -> Self {
        QsarError::Serialization(e.to_string())
    }
}
