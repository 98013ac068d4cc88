use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed season code {0}: last digit must be 1 (spring-summer) or 3 (fall-winter)")]
    MalformedSeason(i64),

    #[error("size token {0:?} is empty after normalization")]
    EmptyAfterNormalize(String),

    #[error("malformed size grid name {raw:?}: {reason}")]
    MalformedGridName { raw: String, reason: String },

    #[error("invalid size grid {name}: {reason}")]
    InvalidGrid { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("table {table}: {reason}")]
    SchemaMismatch { table: String, reason: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("selection of size {size:?} for {season}/{planning_group}/{grid} is not a candidate of the grid")]
    SelectionOutsideGrid {
        season: u16,
        planning_group: String,
        grid: String,
        size: String,
    },

    #[error("split produced an empty {0} partition")]
    EmptyPartition(&'static str),

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("SMOTE needs at least {needed} minority rows, found {found}")]
    TooFewMinority { needed: usize, found: usize },

    #[error("training target has a single class")]
    DegenerateTarget,

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("feature schema mismatch: model expects {expected}, got {found}")]
    FeatureSchemaMismatch { expected: String, found: String },

    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error("ROC needs both classes present")]
    OneClassOnly,

    #[error("no unit price for grid {0:?}")]
    MissingPrice(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("cap violation: {selected} selected cells exceed cap {cap}")]
    CapViolation { selected: usize, cap: usize },

    #[error("cap {cap} is below the {pinned} cells pinned on by overrides")]
    CapBelowOverrides { cap: usize, pinned: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
