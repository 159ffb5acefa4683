use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Every message starts with the component
/// that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph: event {index} is a self-loop on node {node}")]
    SelfLoop { index: usize, node: usize },

    #[error("graph: event {index} endpoint {node} out of range (node count {count})")]
    EndpointOutOfRange {
        index: usize,
        node: usize,
        count: usize,
    },

    #[error("graph: event {index} timestamp {value} outside [0, 1]")]
    TimestampOutOfRange { index: usize, value: f64 },

    #[error("graph: progress {0} outside [0, 1]")]
    ProgressOutOfRange(f64),

    #[error("graph: duplicate dataset tag {0:?} in merge")]
    DuplicateTag(String),

    #[error("graph: unknown dataset tag {0:?}")]
    UnknownTag(String),

    #[error("{component}: empty input: {what}")]
    Empty {
        component: &'static str,
        what: &'static str,
    },

    #[error("io: {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io: {path}: dataset {tag:?} expected {expected} {what}, observed {observed}")]
    ManifestMismatch {
        path: PathBuf,
        tag: String,
        what: &'static str,
        expected: usize,
        observed: usize,
    },

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{component}: invalid configuration: {message}")]
    Config {
        component: &'static str,
        message: String,
    },

    #[error("splits: nothing to predict: no new edges after progress {progress}")]
    NothingToPredict { progress: f64 },

    #[error("splits: progress {progress} + horizon {horizon} exceeds 1")]
    HorizonOutOfRange { progress: f64, horizon: f64 },

    #[error("splits: requested {requested} negative pairs but only {available} non-edges are available")]
    InsufficientNonEdges { requested: usize, available: usize },

    #[error("model: dimension mismatch: {0}")]
    Dimension(String),

    #[error("{component}: node index {node} out of range (node count {count})")]
    NodeOutOfRange {
        component: &'static str,
        node: usize,
        count: usize,
    },

    #[error("train: non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    #[error("eval: AUC undefined with {n_pos} positive and {n_neg} negative scores")]
    AucUndefined { n_pos: usize, n_neg: usize },

    #[error("eval: t-test needs at least 2 values per sample (got {len_a} and {len_b})")]
    TooFewSamples { len_a: usize, len_b: usize },

    #[error("eval: t-test undefined: both samples have zero variance")]
    ZeroVariance,

    #[error("experiments: {context}: {source}")]
    Cell {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{component}: {message}")]
    Serde {
        component: &'static str,
        message: String,
    },
}

impl Error {
    pub(crate) fn config(component: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            component,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        Error::Cell {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
