use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("adjacency matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("adjacency matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("negative edge weight {weight} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, weight: f64 },
    #[error("nonzero self-loop weight at node {node}")]
    NonzeroDiagonal { node: usize },
    #[error("graph is disconnected (lambda_2 = {lambda2:e})")]
    Disconnected { lambda2: f64 },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("covariance of agent {agent} is not positive definite")]
    NotPositiveDefinite { agent: usize },
    #[error("operation requires a uniform regressor covariance profile")]
    NonUniformProfile,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("unstable configuration: {}", .violated.join("; "))]
    UnstableConfiguration { violated: Vec<String> },
    #[error("numerical divergence in run {run} at iteration {iteration} (error {error:e})")]
    NumericalDivergence { run: usize, iteration: usize, error: f64 },
    #[error("edge list line {line}: {message}")]
    EdgeList { line: usize, message: String },
}
