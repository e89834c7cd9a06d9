use std::path::PathBuf;

use crate::train::TrainLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("{}: no valid rows ({rejected} rejected)", path.display())]
    EmptyDataset { path: PathBuf, rejected: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("non-finite input at row {row}, feature `{feature}`")]
    NonFiniteInput { row: usize, feature: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("ill-conditioned fit: {0}")]
    Conditioning(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize, log: Box<TrainLog> },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI's one-line error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) | Error::Schema(_) => "E_SCHEMA",
            Error::EmptyDataset { .. } | Error::Empty(_) => "E_EMPTY",
            Error::InvalidArgument(_) | Error::Shape(_) => "E_ARGUMENT",
            Error::Config(_) => "E_CONFIG",
            Error::NonFiniteInput { .. } => "E_INPUT",
            Error::Calibration(_) => "E_CALIBRATION",
            Error::Conditioning(_) => "E_CONDITIONING",
            Error::UndefinedMetric(_) => "E_METRIC",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::Fold { source, .. } => source.code(),
            Error::ModelFile(_) | Error::Json(_) => "E_MODEL",
            Error::Io(_) | Error::Csv(_) => "E_IO",
        }
    }
}
