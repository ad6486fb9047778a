use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{context}: expected dimension {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid {field}: {message}")]
    InvalidInput { field: &'static str, message: String },

    #[error("object {id} has no stored {role} embedding")]
    MissingEmbedding { id: usize, role: &'static str },

    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,

    #[error("requested {requested} items but only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("pilot contains no true neighbors; increase s_p or r")]
    DegeneratePilot,

    #[error("empty neighborhood")]
    EmptyNeighborhood,

    #[error("RE undefined for zero truth")]
    UndefinedRelativeError,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("omega_nn must exceed rho·omega_c")]
    NonPositiveSelectionBudget,

    #[error("every experiment cell was degenerate")]
    AllCellsDegenerate,

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            field,
            message: message.into(),
        }
    }

    /// Whether the error means the query itself has no well-defined answer
    /// (empty neighborhood, no labelled neighbors in the pilot, zero truth).
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegeneratePilot
                | Error::EmptyNeighborhood
                | Error::UndefinedRelativeError
                | Error::AllCellsDegenerate
        )
    }
}
