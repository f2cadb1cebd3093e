use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed header at offset {offset}: {msg}")]
    Header { offset: usize, msg: String },

    #[error("label out of range at offset {offset}: {label} >= {num_classes}")]
    LabelOutOfRange {
        offset: usize,
        label: u8,
        num_classes: u16,
    },

    #[error("invalid payload at offset {offset}: {msg}")]
    Payload { offset: usize, msg: String },

    #[error("truncated payload at offset {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid constraint: {0}")]
    Constraint(String),

    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("connectivity {conn} is not valid for {ndim}D grids")]
    Connectivity { conn: String, ndim: usize },

    #[error("likelihood is not normalized: {0}")]
    NotNormalized(String),

    #[error("undefined metric for empty class: {0}")]
    EmptySurface(String),

    #[error("geometry infeasible: {0}")]
    Geometry(String),

    #[error("benchmark: {0}")]
    Bench(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
