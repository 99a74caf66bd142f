//! Crate-wide error type.

use thiserror::Error;

/// Errors raised across the pipeline. Parse errors carry the 1-based line
/// number of the offending line so files can be fixed by hand.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed header: {detail}")]
    MalformedHeader { line: usize, detail: String },

    #[error("line {line}: malformed record: {detail}")]
    MalformedRecord { line: usize, detail: String },

    #[error("line {line}: duplicate node id {id}")]
    DuplicateNode { line: usize, id: u32 },

    #[error("line {line}: edge endpoint {id} does not exist")]
    DanglingEdge { line: usize, id: u32 },

    #[error("line {line}: instance row has {got} values, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("unknown node id {0}")]
    UnknownNode(u32),

    #[error("unknown node type '{0}'")]
    UnknownType(String),

    #[error("meta-path must start at the bag type '{bag}', got '{got}'")]
    MetaPathNotBagRooted { bag: String, got: String },

    #[error("no relation connects types '{a}' and '{b}' in meta-path '{path}'")]
    MetaPathDisconnected { a: String, b: String, path: String },

    #[error("walk start node {0} is not of the bag type")]
    StartNotBag(u32),

    #[error("no walks recorded for meta-path index {0}")]
    EmptyCorpusForPath(usize),

    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical divergence in task {task}: {detail}")]
    Diverged { task: u32, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
