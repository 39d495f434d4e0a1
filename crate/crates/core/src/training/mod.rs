//! Focal-loss training with AdamW, record-level k-fold cross-validation and
//! per-sample F-score evaluation.

mod eval;
mod kfold;
mod loss;
mod metrics;
mod optim;
mod trainer;

pub use eval::{evaluate, record_logits, record_probabilities, threshold, Evaluation, INFERENCE_BATCH};
pub use kfold::kfold_split;
pub use loss::{focal_loss, focal_loss_masked, focal_loss_scalar};
pub use metrics::{f_score, Confusion};
pub use optim::{adamw_step, adamw_step_params, OptimizerState};
pub use trainer::{
    cross_validate, fit, fold_seed, holdout_split, mean_f_score, train, write_report, EpochStats, FoldReport, FoldRun,
    TrainConfig, TrainOutcome, REPORT_HEADER,
};

use thiserror::Error;

use crate::data::DataError;
use crate::model::{DetectorParams, ModelError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("{records} records cannot be split into {folds} folds")]
    TooFewRecords { records: usize, folds: usize },
    #[error("target {value} at index {index} is not 0 or 1")]
    NonBinaryTarget { index: usize, value: u8 },
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite gradient in parameter tensor {tensor} at index {index}")]
    NonFiniteGradient { tensor: usize, index: usize },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    /// Carries the parameters from the end of the last completed epoch.
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_good: Box<DetectorParams>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
