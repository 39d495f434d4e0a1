//! Sensor telemetry: packet codec, stream reassembly, replay and online
//! detection.

mod ingest;
mod online;
mod packet;
mod replay;
mod session;

pub use ingest::{Ingested, StreamState};
pub use online::{offline_events, OnlineDetector, SpikeEvent};
pub use packet::{
    decode_packet, encode_packet, frame_len, PacketError, SensorId, SensorPacket, MAGIC, MAX_FRAME_LEN, MAX_INTERVALS,
    SENSOR_ID_LEN,
};
pub use replay::{
    drop_mask, read_frame, replay_sensor, replay_to, rr_to_wire, sensor_packets, write_end, write_frame, ReplayOptions,
    ReplayStats,
};
pub use session::{format_event, run_session, serve, ServeOptions, SessionSummary, QUEUE_DEPTH};

use thiserror::Error;

use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error("packet from sensor {found} on a stream of sensor {expected}")]
    SensorMismatch { expected: String, found: String },
    #[error("misaligned packet: {0}")]
    Misaligned(String),
    #[error("peer disconnected")]
    Disconnected,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
