use thiserror::Error;

use crate::scores::Class;
use crate::trainer::TrainTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image has no negative scores")]
    EmptyNegatives,

    #[error("{class} score at index {index} is {value}, expected a value strictly inside (0, 1)")]
    OutOfRange { class: Class, index: usize, value: f64 },

    #[error("{class} score at index {index} is not finite")]
    NonFinite { class: Class, index: usize },

    #[error("logarithm base must exceed 1, got {0}")]
    BadBase(f64),

    #[error("input is empty")]
    EmptyInput,

    #[error("invalid prior mask: {0}")]
    BadPriorMask(String),

    #[error("loss requires at least one positive score")]
    NoPositives,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("finite-difference step {step} moves {class} score {index} outside (0, 1)")]
    StepOutOfRange { class: Class, index: usize, step: f64 },

    #[error("scaling factor {0} does not yield an integer batch size and iteration count")]
    BadAlpha(f64),

    #[error("invalid generator spec: {0}")]
    BadSpec(String),

    #[error("training diverged at iteration {iteration}")]
    DivergenceDetected { iteration: usize, trace: Box<TrainTrace> },
}
