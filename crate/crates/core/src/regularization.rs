//! Fairness regularizers: absolute correlation penalty on negatives and an
//! adversarial sigmoid head with gradient reversal.

mod adversary;
mod correlation;

use thiserror::Error;

pub use adversary::{adversary_step, AdversaryHead, AdversarySpec, AdversaryStep};
pub use correlation::{corr_penalty_and_grad, pearson_corr, CorrPenalty, CorrStats, PenaltySpec, ZERO_VARIANCE_EPS};

#[derive(Debug, Error, PartialEq)]
pub enum RegularizationError {
    #[error("length mismatch: {left} predictions vs {right} group flags")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least 2 examples, got {0}")]
    TooFewExamples(usize),
    #[error("hidden batch has {found} values, expected {expected}")]
    HiddenShape { expected: usize, found: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}
