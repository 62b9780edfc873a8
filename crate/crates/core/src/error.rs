use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has near-zero norm")]
    ZeroVectorRow { row: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid neighbourhood size: {0}")]
    InvalidK(String),
    #[error("min samples must be at least 2, got {0}")]
    InvalidMinSamples(usize),
    #[error("eps must be positive and finite, got {0}")]
    InvalidEps(f64),
    #[error("need at least {needed} clusters, found {found}")]
    NotEnoughClusters { needed: usize, found: usize },
    #[error("eta {eta} too large for {n} samples (requires 2*eta < n)")]
    EtaTooLarge { eta: usize, n: usize },
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("activation cache does not belong to the current parameters")]
    StaleCache,
    #[error("clustering selected no samples at iteration {iteration}")]
    EmptySelection { iteration: usize },
    #[error("dataset has samples without ground-truth identity")]
    MissingLabels,
    #[error("query set has no query with a valid gallery match")]
    NoValidGallery,
    #[error("no clustered samples to score")]
    NoClusteredSamples,
    #[error("invalid synthetic data spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
