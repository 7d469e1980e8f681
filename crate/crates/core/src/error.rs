use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("stage {stage} out of range 0..={horizon}")]
    StageOutOfRange { stage: usize, horizon: usize },

    #[error("stage mismatch: expected {expected}, found {found}")]
    StageMismatch { expected: usize, found: usize },

    #[error("dimension mismatch at node {node}: expected {expected}, found {found}")]
    DimensionMismatch {
        node: NodeId,
        expected: usize,
        found: usize,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("empty family")]
    EmptyFamily,

    #[error("non-finite value at node {node}")]
    NonFinite { node: NodeId },

    #[error("risk aversion must be positive, got {0}")]
    NonPositiveGamma(f64),

    #[error("scaling generator requires positive state at node {node}, got {value}")]
    NonPositiveScale { node: NodeId, value: f64 },

    #[error("missing shock data at node {node}")]
    MissingShock { node: NodeId },

    #[error("control set is empty at node {node} (state {state})")]
    EmptyControlSet { node: NodeId, state: f64 },

    #[error("control set at node {node} is unbounded along a scan direction")]
    Unbounded { node: NodeId },

    #[error("control grid at node {node} is empty for resolution {resolution}; try {suggested}")]
    ResolutionTooCoarse {
        node: NodeId,
        resolution: f64,
        suggested: f64,
    },

    #[error("control grid at node {node} would contain {points} points")]
    GridTooLarge { node: NodeId, points: u128 },

    #[error("infeasible problem at node {node}: {reason}")]
    Infeasible { node: NodeId, reason: String },

    #[error("divergent supremum at node {node}: {reason}")]
    Divergence { node: NodeId, reason: String },

    #[error("no finite constant K: {0}")]
    NoK(String),

    #[error("state {state} outside the grid [{lo}, {hi}] at node {node}")]
    OutsideGrid {
        node: NodeId,
        state: f64,
        lo: f64,
        hi: f64,
    },

    #[error("combinatorial budget exceeded: {count} > {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("set is not stable: {0}")]
    NotStable(String),

    #[error("configuration error: {0}")]
    Config(String),
}
