//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised while building, evaluating or analysing a network.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("graph contains a cycle through neuron `{0}`")]
    CycleDetected(String),

    #[error("edge {src} -> {dst} references unknown neuron `{missing}`")]
    DanglingEdge {
        src: String,
        dst: String,
        missing: String,
    },

    #[error("pooling neuron `{id}` has kernel size {arity} but k = {k}")]
    BadPoolArity { id: String, k: usize, arity: usize },

    #[error("output neuron `{0}` must carry the identity activation")]
    NonIdentityOutput(String),

    #[error("neuron `{id}` is declared {declared} but has {antecedents} antecedent(s)")]
    InputMismatch {
        id: String,
        declared: &'static str,
        antecedents: usize,
    },

    #[error("duplicate neuron id `{0}`")]
    DuplicateNeuron(String),

    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),

    #[error("unknown neuron `{0}`")]
    UnknownNeuron(String),

    #[error("pooling neuron `{0}` must have a zero bias")]
    NonZeroPoolBias(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter vector has {got} coordinates, architecture expects {expected}")]
    ParamMismatch { expected: usize, got: usize },

    #[error("path count {count} exceeds the enumeration cap {cap}")]
    PathExplosion { count: u128, cap: u128 },

    #[error("rescaling factor for `{id}` must be positive, got {value}")]
    NonPositiveFactor { id: String, value: f64 },

    #[error("neuron `{0}` cannot be rescaled (input or output neuron)")]
    IneligibleNeuron(String),

    #[error("neither parameter dominates the other; path-metric is not exactly computable")]
    DominanceUnverified,

    #[error("layer {layer} has {got} columns but the previous layer has {expected} rows")]
    RaggedLayers {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("sign condition violated at coordinates {0:?}")]
    SignConditionViolated(Vec<usize>),

    #[error("coordinate {0} is zero on one side of the trajectory only")]
    MixedZeroCoordinate(usize),

    #[error("data batch required for the {0} criterion")]
    MissingData(&'static str),

    #[error("infeasible pruning amount: {0}")]
    InfeasibleAmount(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
