//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by lattice construction, tree operations, drivers and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis vectors are linearly dependent or ill-conditioned: {0}")]
    SingularBasis(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("simplex weights invalid: {0}")]
    InvalidSimplex(String),

    #[error("tree with {paths} paths exceeds the cap of {cap}")]
    TreeTooLarge { paths: usize, cap: usize },

    #[error("field slice has {got} entries, expected {expected} at depth {depth}")]
    DepthMismatch {
        depth: usize,
        expected: usize,
        got: usize,
    },

    #[error("reference measure vanishes on a path where the target measure is positive")]
    NonEquivalent,

    #[error("belief kernel is not interior (entry {value:.3e} at time {time}, node {node})")]
    BeliefNotInterior {
        time: usize,
        node: usize,
        value: f64,
    },

    #[error("empty slope set for worst-case driver")]
    EmptySet,

    #[error("driver is not concave")]
    NotConcave,

    #[error("driver is not balanced")]
    NotBalanced,

    #[error("numeric optimizer failed: {0}")]
    OptimizerFailed(String),

    #[error("nonlinear expectation failed a consistency spot check: {0}")]
    InconsistentExpectation(String),

    #[error("driver evaluation returned a non-finite value at time {time}, node {node}")]
    DriverEvaluationFailed { time: usize, node: usize },

    #[error("linear driver slope lies outside the increment hull at time {time}, node {node}")]
    SlopeOutsideTheta { time: usize, node: usize },

    #[error("comparison precondition could not be verified: {0}")]
    PreconditionUnverifiable(String),

    #[error("penalty diverged at time {time}, node {node}")]
    PenaltyDiverged { time: usize, node: usize },

    #[error("driver does not expose a maximizer")]
    NoArgmax,

    #[error("no root of the utility gradient found at time {time}, node {node}")]
    NoRoot { time: usize, node: usize },

    #[error("lattice point not reachable at time {time}")]
    UnreachablePoint { time: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
