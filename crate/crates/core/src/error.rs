use thiserror::Error;

/// Errors raised by the exact engine and the torus backend.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("malformed system description: {0}")]
    Malformed(String),

    #[error("weights are not a probability vector: {0}")]
    NonProbabilityWeights(String),

    #[error("generator {generator} does not preserve the measure at state {state}")]
    MeasureNotPreserved { generator: usize, state: usize },

    #[error("generators {first} and {second} do not commute (witness state {state})")]
    NonCommuting {
        first: usize,
        second: usize,
        state: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("partition cell {cell} has zero weight")]
    ZeroWeightCell { cell: usize },

    #[error("observable is not measurable with respect to the given partition (cell {cell})")]
    NotMeasurable { cell: usize },

    #[error("tuple {tuple}: g_{slot} fails its required invariance")]
    InvarianceViolated { tuple: usize, slot: usize },

    #[error("state budget exceeded: {states} states with {actions} actions (budget {budget})")]
    BudgetExceeded {
        states: usize,
        actions: usize,
        budget: usize,
    },

    #[error("cannot decide resonance: {0}")]
    UndecidableResonance(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
