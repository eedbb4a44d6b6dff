use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{axis} index {index} out of bounds (size {size})")]
    OutOfBounds {
        axis: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("land mask has no land cells")]
    NoLand,

    #[error("invalid time index: {0}")]
    InvalidTime(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated file {}: {detail}", path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("inconsistent variable catalog: {0}")]
    Catalog(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {}:{line}: {detail}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("no samples for calendar month(s) {0:?}")]
    MissingMonths(Vec<u8>),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("requested {requested} components but training matrix has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("field has no valid cells to fill from")]
    AllMissing,

    #[error("positional encoding dimension must be even and >= 2, got {0}")]
    OddDimension(usize),

    #[error("time step {t} needs {needed} months of history")]
    InsufficientHistory { t: usize, needed: usize },

    #[error("{0} has not been fitted")]
    Unfitted(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("time step {t} is outside the readable range of this view (< {limit})")]
    Leak { t: usize, limit: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
