use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the factorization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("negative or non-finite entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("NNLS did not converge within {iters} iterations")]
    IterationLimit { iters: usize, best: Vec<f64> },

    #[error("coefficient row {row} is identically zero; its dictionary column is unidentifiable")]
    DegenerateDictionary { row: usize },

    #[error("non-finite gradient in parameter group `{group}`")]
    Numeric { group: String },

    #[error("state mismatch: {0}")]
    State(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{path}: negative count {value} for category `{category}` in sample `{sample}` (line {line})")]
    NegativeCount {
        path: PathBuf,
        line: u64,
        category: String,
        sample: String,
        value: f64,
    },

    #[error("{path}: expected {expected} category rows, found {found}")]
    RowCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
