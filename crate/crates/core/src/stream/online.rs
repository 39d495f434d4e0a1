//! Incremental detection over an assembled RR stream.
//!
//! Each contiguous piece of the stream is windowed exactly like an offline
//! record. Window `j` of a piece becomes runnable once the piece holds
//! `(j + 1)·Ts + P` samples, which is when its right context is complete.
//! On flush the remaining windows run with tail replication.

use crate::data::{normalize, segment_count, segment_input};
use crate::model::{predict_logits, DetectorConfig, DetectorParams};
use crate::ops::sigmoid_scalar;
use crate::training::record_logits;

use super::StreamError;

/// A sample classified as a spike.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeEvent {
    /// Index in the assembled sequence.
    pub index: usize,
    pub probability: f64,
}

pub struct OnlineDetector {
    params: DetectorParams,
    cfg: DetectorConfig,
    threshold: f64,
    piece: Vec<f64>,
    /// Assembled index of `piece[0]`.
    piece_start: usize,
    next_window: usize,
    /// Samples classified so far (assembled indices below this).
    high_water: usize,
}

impl OnlineDetector {
    pub fn new(params: DetectorParams, cfg: DetectorConfig, threshold: f64) -> Result<Self, StreamError> {
        cfg.validate()?;
        if cfg.classes != 1 {
            return Err(StreamError::Config(format!("online detection needs one output class, got {}", cfg.classes)));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(StreamError::Config(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(Self {
            params,
            cfg,
            threshold,
            piece: Vec::new(),
            piece_start: 0,
            next_window: 0,
            high_water: 0,
        })
    }

    /// Samples classified so far.
    pub fn high_water(&self) -> usize {
        self.high_water
    }

    /// Samples received so far.
    pub fn received(&self) -> usize {
        self.piece_start + self.piece.len()
    }

    /// Appends samples and returns events from every window that became
    /// complete. With `discontinuity`, the current piece is flushed first
    /// and `samples` start a new one.
    pub fn push(&mut self, samples: &[f64], discontinuity: bool) -> Result<Vec<SpikeEvent>, StreamError> {
        let mut events = Vec::new();
        if discontinuity && !self.piece.is_empty() {
            events = self.flush()?;
        }
        self.piece.extend_from_slice(samples);
        let ts = self.cfg.target_len();
        while self.piece.len() >= (self.next_window + 1) * ts + self.cfg.pad {
            events.extend(self.run_window(self.next_window)?);
            self.next_window += 1;
        }
        Ok(events)
    }

    /// Classifies the rest of the current piece and starts a new one.
    pub fn flush(&mut self) -> Result<Vec<SpikeEvent>, StreamError> {
        let mut events = Vec::new();
        if !self.piece.is_empty() {
            let total = segment_count(self.piece.len(), self.cfg.seg_len, self.cfg.pad);
            for j in self.next_window..total {
                events.extend(self.run_window(j)?);
            }
        }
        self.piece_start += self.piece.len();
        self.high_water = self.piece_start;
        self.piece.clear();
        self.next_window = 0;
        Ok(events)
    }

    fn run_window(&mut self, j: usize) -> Result<Vec<SpikeEvent>, StreamError> {
        let ts = self.cfg.target_len();
        let (input, _) = normalize(&segment_input(&self.piece, j, self.cfg.seg_len, self.cfg.pad));
        let logits = predict_logits(&self.params, &self.cfg, &[&input])?;
        let first = j * ts;
        let valid = ts.min(self.piece.len() - first);
        self.high_water = self.piece_start + first + valid;
        Ok(logits[0][..valid]
            .iter()
            .enumerate()
            .filter_map(|(t, &z)| {
                let probability = sigmoid_scalar(z);
                (probability >= self.threshold).then_some(SpikeEvent {
                    index: self.piece_start + first + t,
                    probability,
                })
            })
            .collect())
    }
}

/// Offline reference: windowed detection of a whole sequence, with events
/// indexed from `offset`.
pub fn offline_events(
    params: &DetectorParams,
    cfg: &DetectorConfig,
    rr: &[f64],
    threshold: f64,
    offset: usize,
) -> Result<Vec<SpikeEvent>, StreamError> {
    Ok(record_logits(params, cfg, rr)?
        .into_iter()
        .enumerate()
        .filter_map(|(i, z)| {
            let probability = sigmoid_scalar(z);
            (probability >= threshold).then_some(SpikeEvent {
                index: offset + i,
                probability,
            })
        })
        .collect())
}
