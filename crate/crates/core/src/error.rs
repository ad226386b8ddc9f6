use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the layout library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quad: {0}")]
    InvalidQuad(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample larger than population: requested {requested}, population {population}")]
    SampleLargerThanPopulation { requested: usize, population: usize },

    #[error("empty sample requested")]
    EmptySample,

    #[error("no candidates to match against")]
    NoCandidates,

    #[error("no quads to choose from")]
    NoQuads,

    #[error("normals required")]
    NormalsRequired,

    #[error("insufficient support: {got} points kept, need at least {needed}")]
    InsufficientSupport { needed: usize, got: usize },

    #[error("degenerate normals: summed normal has length {0:e}")]
    DegenerateNormals(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("malformed PLY header: {0}")]
    PlyHeader(String),

    #[error("unsupported PLY element layout: {0}")]
    PlyLayout(String),

    #[error("truncated PLY payload: {0}")]
    PlyTruncated(String),

    #[error("schema violation at {field}: {reason}")]
    Schema { field: String, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
