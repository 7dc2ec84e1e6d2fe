use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UpliftError>;

#[derive(Debug, Error)]
pub enum UpliftError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// `row` is the 1-based data row (the header is not counted).
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    MalformedCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing column {0}")]
    MissingColumn(String),

    #[error("no propensity column and no default propensity supplied")]
    MissingPropensity,

    #[error("row {row} has {found} cells, header has {expected}")]
    ColumnCount {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("feature width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("treatment arm {0} is empty")]
    EmptyArm(u8),

    #[error("fold stratum (treatment={treatment}, conversion={conversion}) has {size} rows, need at least {k}")]
    StratumTooSmall {
        treatment: u8,
        conversion: u8,
        size: usize,
        k: usize,
    },

    #[error("intercept calibration failed: {0}")]
    Calibration(String),

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error("model format error: {0}")]
    ModelFormat(String),
}
