//! Distributional ranking loss for heavily imbalanced candidate scoring.
//!
//! The loss tilts the score distribution of each class toward its hard
//! examples with a KL-regularized reweighting, then ranks the expected
//! negative score below the expected positive score by a margin through a
//! smooth surrogate of the hinge.

pub mod csvio;
pub mod drloss;
pub mod error;
pub mod gradcheck;
mod numeric;
pub mod scores;
pub mod surrogate;
pub mod synth;
pub mod tilt;
pub mod trainer;

pub use drloss::{
    all_pairs_loss, cross_entropy_loss, dr_loss, focal_loss, margin_check, neg_only_loss,
    worst_case_loss, LossKind, LossResult, LossSpec, MarginReport,
};
pub use error::{Error, Result};
pub use gradcheck::GradCheckReport;
pub use scores::{tuned_lambdas, validate, Class, DrParams, ImageScores, Prior};
pub use surrogate::SurrogateSpec;
pub use synth::{make_dataset, sample_scores, GeneratorSpec, GroupedDataset, Histogram};
pub use tilt::{tilt_negative, tilt_positive, TiltedDistribution};
pub use trainer::{init_model, scaled_config, train, Model, TrainTrace, TrainerConfig};
