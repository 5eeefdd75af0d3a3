use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invariant violated at {location}: {message}")]
    Invariant { location: String, message: String },

    #[error("invalid node id {id} (node_count = {node_count})")]
    InvalidNode { id: usize, node_count: usize },

    #[error("isolated node {0}: random walk and curvature are undefined")]
    IsolatedNode(usize),

    #[error("({0}, {1}) is not an edge")]
    NotAnEdge(usize, usize),

    #[error("infinite ground distance between nodes {0} and {1}")]
    InfiniteDistance(usize, usize),

    #[error("no informative partner for node {0}: every velocity equals its own")]
    NoInformativePartner(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("transport solver failed: {0}")]
    Transport(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invariant(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user input or configuration rather than a
    /// failure during computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Invariant { .. }
                | Error::InvalidNode { .. }
                | Error::Config(_)
                | Error::DimensionMismatch(_)
                | Error::Io { .. }
        )
    }
}
