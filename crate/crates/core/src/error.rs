use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} has {count} vertices; only triangles are supported")]
    NonTriangleFace { face: usize, count: usize },
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("mesh bounding box has zero extent on every axis")]
    DegenerateMesh,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("conjugate gradient did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("projection onto the surface failed from ({x}, {y}, {z})")]
    ProjectionFailed { x: f64, y: f64, z: f64 },
    #[error("unknown saddle id {0}")]
    UnknownSaddle(usize),
    #[error("unknown deformer id {0}")]
    UnknownDeformer(u64),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("session format error: {0}")]
    Session(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png encoding error: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
