use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} does not hold {len} values")]
    Shape { shape: Vec<usize>, len: usize },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("index {index} out of bounds for {op} with {bound} rows")]
    Bounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unknown node kind `{0}` for this vocabulary")]
    Vocabulary(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn in_frame(self, frame: usize) -> Self {
        Error::Frame {
            frame,
            source: Box::new(self),
        }
    }

    /// Strips frame context so callers can match on the underlying kind.
    pub fn root(&self) -> &Error {
        match self {
            Error::Frame { source, .. } => source.root(),
            e => e,
        }
    }
}
