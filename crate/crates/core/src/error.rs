use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "cannot calibrate hyperbolic radius for mean degree {target}: achievable range is [{min:.3}, {max:.3}]"
    )]
    Calibration { target: f64, min: f64, max: f64 },

    #[error("node id {id} out of range for graph with {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },

    #[error("no path from {origin} to {dest}")]
    NoPath { origin: usize, dest: usize },

    #[error("degenerate origin/destination pair ({origin}, {dest})")]
    DegeneratePair { origin: usize, dest: usize },

    #[error("node {0} is the destination; no actions are available there")]
    TerminalState(usize),

    #[error("{0} is not a neighbor of {1}")]
    NotNeighbor(usize, usize),

    #[error("feature width mismatch: network expects {expected}, got {got}")]
    Schema { expected: usize, got: usize },

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("reinforcement learning diverged in episode {episode}: {source}")]
    RlDivergence {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
