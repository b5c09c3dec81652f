use thiserror::Error;

use crate::netcore::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for a graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("self-loop at node {0}")]
    SelfLoop(usize),

    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("graph is not connected")]
    Disconnected,

    #[error("invalid weight matrix: {0}")]
    InvalidWeights(ValidationReport),

    #[error("weight matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("row {0} of the equation has (numerically) zero norm")]
    ZeroRow(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in state at t={t}")]
    NonFinite { t: usize },

    #[error("privacy budget is infinite: psi ({psi}) must be strictly below phi ({phi})")]
    InfiniteBudget { psi: f64, phi: f64 },

    #[error("identification failed: {0}")]
    IdentificationFailed(String),

    #[error("closed loop is not stable (spectral radius {0})")]
    Unstable(f64),

    #[error("probe generation failed: {0}")]
    Probe(String),

    #[error("input sums differ (gap {0:e})")]
    SumMismatch(f64),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
