//! Error type shared by every module in the crate.

use crate::penalty::PenaltyReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs whose ratios cannot be represented as exact rationals
    /// (or overflow the rational arithmetic while trying).
    #[error("non-commensurate input: {0}")]
    NonCommensurate(String),

    /// The ordering 0 < tau2 < tau1 < horizon was violated.
    #[error("delay ordering violation: {0}")]
    OrderViolation(String),

    /// A quantity that must be strictly positive was not.
    #[error("non-positive input: {0}")]
    NonPositive(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A caller-supplied value array disagrees with the pinned nodes.
    #[error("custom array violates pins: {0}")]
    CustomArrayViolatesPins(String),

    /// Attempted write to a history node or the terminal node.
    #[error("refusing write to pinned node {0}")]
    PinnedNodeWrite(usize),

    /// A user function produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    /// Penalty weights must be nonnegative and finite.
    #[error("invalid penalty weight {0}")]
    NonPositivePenalty(f64),

    /// Backtracking ran below the machine floor, or the supplied
    /// direction was not a descent direction.
    #[error("line search failure: {0}")]
    LineSearchFailure(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    /// The KKT system is singular: redundant or inconsistent
    /// constraints (for example an unreachable terminal state).
    #[error("singular KKT system: {0}")]
    SingularKkt(String),

    /// The dense oracle refuses instances beyond desk scale.
    #[error("problem too large for the dense oracle: {0}")]
    OracleTooLarge(String),

    /// An inner solve died partway through the penalty loop. Carries
    /// the stages that did complete.
    #[error("inner solve failed at stage {stage}: {source}")]
    InnerSolveFailure {
        stage: usize,
        #[source]
        source: Box<Error>,
        partial: Box<PenaltyReport>,
    },
}
