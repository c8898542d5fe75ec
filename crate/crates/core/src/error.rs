use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MltaError>;

#[derive(Debug, Error)]
pub enum MltaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(String),

    /// A data value failed validation; `row` is the 1-based file line.
    #[error("{message} at row {row}, column {column}")]
    Validation {
        message: String,
        row: u64,
        column: String,
    },

    #[error("model file schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate start: group {group} emptied at iteration {iteration}")]
    Degenerate { group: usize, iteration: usize },

    #[error("all {} starts failed: {}", .0.len(), .0.join("; "))]
    AllStartsFailed(Vec<String>),
}

impl MltaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MltaError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the estimation itself rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MltaError::Numerical(_) | MltaError::Degenerate { .. } | MltaError::AllStartsFailed(_)
        )
    }
}
