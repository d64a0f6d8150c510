use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("{op}: degenerate input ({msg})")]
    Degenerate { op: &'static str, msg: String },

    #[error("backward: {0}")]
    Backward(String),

    #[error("in {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("graph: {0}")]
    Graph(#[from] GraphError),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("keypoint file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training aborted at epoch {epoch}, step {step}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({a}, {b}) out of range for {n} nodes")]
    NodeRange { a: usize, b: usize, n: usize },
    #[error("graph is disconnected: node {to} unreachable from node {from}")]
    Disconnected { from: usize, to: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    Magic,
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated or malformed payload: {0}")]
    Malformed(String),
    #[error("parameter {name}: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter {0}")]
    Missing(String),
    #[error("unexpected parameter {0}")]
    Unexpected(String),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True if this error (or the error it wraps) came from a non-finite activation.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Degenerate { .. } => true,
            Error::Layer { source, .. } | Error::Training { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

/// Attach a layer name to errors raised inside a model component.
pub(crate) trait LayerContext<T> {
    fn in_layer(self, layer: impl FnOnce() -> String) -> Result<T>;
}

impl<T> LayerContext<T> for Result<T> {
    fn in_layer(self, layer: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| match e {
            // keep the innermost layer name
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                layer: layer(),
                source: Box::new(e),
            },
        })
    }
}
