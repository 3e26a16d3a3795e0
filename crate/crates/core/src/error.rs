use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("asymmetric at ({0},{1})")]
    Asymmetric(usize, usize),

    #[error("nonzero diagonal at {0}")]
    NonzeroDiagonal(usize),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("stable flag on non-edge at ({0},{1})")]
    FlagOnNonEdge(usize, usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("resolution {blocks} exceeds node count {nodes}")]
    ResolutionTooFine { blocks: usize, nodes: usize },

    #[error("matrix size {size} exceeds limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(usize, usize),

    #[error("{0} does not divide {1}")]
    Divisibility(usize, usize),

    #[error("empty group")]
    EmptyGroup,

    #[error("k-means needs k <= number of points (k={k}, points={points})")]
    TooManyClusters { k: usize, points: usize },

    #[error("dataset lacks ground-truth stable edge flags")]
    MissingFlags,

    #[error("graph {0} has no environment tag")]
    MissingEnv(usize),

    #[error("degenerate pool: all edges share one label")]
    DegeneratePool,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("gradient check failed: max relative error {max_rel_err:e} > {tolerance:e}")]
    GradCheck { max_rel_err: f64, tolerance: f64 },

    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
