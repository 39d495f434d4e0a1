//! Cardiospike detection in RR-interval rhythmograms: a small tensor and
//! reverse-mode autodiff core, the dilated-convolution detector, training
//! and cross-validation, corpus handling and sensor streaming.

pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod stream;
pub mod tensor;
pub mod training;

pub use data::{DataError, RhythmRecord, SynthConfig};
pub use graph::{Graph, Var};
pub use model::{Checkpoint, DetectorConfig, DetectorParams, ModelError};
pub use stream::{SensorId, SensorPacket, SpikeEvent, StreamError};
pub use tensor::{Tensor, TensorError};
pub use training::{TrainConfig, TrainError};
