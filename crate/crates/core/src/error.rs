use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("distance matrix is not symmetric at ({from}, {to}): {forward} vs {backward}")]
    AsymmetricDistance {
        from: String,
        to: String,
        forward: f64,
        backward: f64,
    },

    #[error("invalid distance {value} between {from} and {to}")]
    InvalidDistance { from: String, to: String, value: f64 },

    #[error("unknown node id {0}")]
    UnknownNode(String),

    #[error("nodes outside every cloudlet radius: {0:?}")]
    UncoveredNodes(Vec<String>),

    #[error("graph has no node positions; radius partitioning needs a positions file")]
    MissingPositions,

    #[error("local and cross node sets overlap at node {0}")]
    OverlappingNodeSets(usize),

    #[error("{path}: row {row}, column {column}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("series has zero variance; cannot standardize")]
    ZeroVariance,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sum of true values is not positive; WMAPE undefined")]
    ZeroTruthSum,

    #[error("incompatible models: {0} vs {1}")]
    IncompatibleModels(String, String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("horizon mismatch between reports: {0} vs {1}")]
    HorizonMismatch(usize, usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
