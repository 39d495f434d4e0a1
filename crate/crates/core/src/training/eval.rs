//! Whole-record inference and scoring.

use crate::data::{normalize, segment_count, segment_input, RhythmRecord};
use crate::model::{predict_logits, DetectorConfig, DetectorParams};
use crate::ops::sigmoid_scalar;

use super::{focal_loss_scalar, Confusion, TrainConfig, TrainError};

/// Segments evaluated per forward pass during inference.
pub const INFERENCE_BATCH: usize = 64;

/// One logit per sample of `rr`, from overlapping normalized segments.
pub fn record_logits(params: &DetectorParams, cfg: &DetectorConfig, rr: &[f64]) -> Result<Vec<f64>, TrainError> {
    if cfg.classes != 1 {
        return Err(TrainError::InvalidConfig(format!(
            "record inference needs a single output class, got {}",
            cfg.classes
        )));
    }
    if rr.is_empty() {
        return Ok(Vec::new());
    }
    let n = segment_count(rr.len(), cfg.seg_len, cfg.pad);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|j| normalize(&segment_input(rr, j, cfg.seg_len, cfg.pad)).0)
        .collect();
    let mut out = Vec::with_capacity(n * cfg.target_len());
    for chunk in inputs.chunks(INFERENCE_BATCH) {
        let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        for logits in predict_logits(params, cfg, &refs)? {
            out.extend(logits);
        }
    }
    out.truncate(rr.len());
    Ok(out)
}

/// Spike probability per sample.
pub fn record_probabilities(params: &DetectorParams, cfg: &DetectorConfig, rr: &[f64]) -> Result<Vec<f64>, TrainError> {
    Ok(record_logits(params, cfg, rr)?.into_iter().map(sigmoid_scalar).collect())
}

pub fn threshold(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Mean focal loss and confusion counts over a set of records.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: Confusion,
    pub samples: usize,
}

pub fn evaluate(
    params: &DetectorParams,
    cfg: &DetectorConfig,
    records: &[RhythmRecord],
    tcfg: &TrainConfig,
) -> Result<Evaluation, TrainError> {
    let mut eval = Evaluation::default();
    let mut total = 0.0;
    for rec in records {
        let logits = record_logits(params, cfg, &rec.rr)?;
        for (&z, &t) in logits.iter().zip(&rec.labels) {
            total += focal_loss_scalar(z, t, tcfg.focal_alpha, tcfg.focal_gamma);
        }
        let pred: Vec<u8> = logits.iter().map(|&z| u8::from(sigmoid_scalar(z) >= tcfg.threshold)).collect();
        eval.confusion.add(&pred, &rec.labels)?;
        eval.samples += rec.len();
    }
    if eval.samples > 0 {
        eval.loss = total / eval.samples as f64;
    }
    Ok(eval)
}
