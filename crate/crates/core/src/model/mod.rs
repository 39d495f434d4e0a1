//! Spike detector architecture: residual base blocks with dilated
//! per-channel convolutions and squeeze-and-excitation gating, parallel
//! filter stacks with summed skip branches, and a per-timestep head.

mod checkpoint;
mod config;
mod detector;
mod params;

pub use checkpoint::{fold_key, Checkpoint, CheckpointEntry};
pub use config::{dilation_for_layer, receptive_field, DetectorConfig};
pub use detector::{detector_forward, head_forward, predict_logits, predict_segment, residual_block_forward};
pub use params::{BlockParams, DetectorParams, HeadParams, Linear};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("detector input must be ({expected}, 1), got {found:?}")]
    InputShape { expected: usize, found: Vec<usize> },
    #[error("parameter layout: {0}")]
    ParamLayout(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
