use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed PFM at byte {offset}: {msg}")]
    PfmParse { offset: usize, msg: String },

    #[error("png error: {0}")]
    Png(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("projection of the camera center is undefined")]
    CameraCenter,

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("point {0:?} outside the field's valid interior")]
    OutOfDomain([f64; 3]),

    #[error("vertex {index} at {position:?} outside the grid interior")]
    VertexOutsideGrid { index: usize, position: [f64; 3] },

    #[error("visual hull is empty: no node projects inside every mask")]
    EmptyHull,

    #[error("grid layouts do not match: {0}")]
    LayoutMismatch(String),

    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),

    #[error("no valid observation pixels")]
    EmptyObservations,

    #[error("loss undefined: zero valid pixels")]
    NoValidPixels,

    #[error("mean direction undefined: resultant norm {0} below threshold")]
    UndefinedDirection(f64),

    #[error("normal with non-positive z has no (p, q) parameterization")]
    OutOfHemisphere,

    #[error("g-buffer pixel references missing face {0}")]
    MissingFace(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("no surface samples visible from the input views")]
    NoVisibleSamples,

    #[error("reconstruction diverged: {0}")]
    Diverged(String),

    #[error("malformed OBJ at line {line}: {msg}")]
    ObjParse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
