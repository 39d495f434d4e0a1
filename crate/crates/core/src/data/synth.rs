//! Synthetic rhythmograms with r-shaped cardiospikes.
//!
//! Each spike is one elongated interval followed by a shortened one and a
//! short geometric relaxation back to baseline. For amplitude `a`,
//! undershoot `u` and decay `r`, the deviations from baseline are
//!
//! ```text
//! +a, -u·a, +u·a·r, +u·a·r², …   (relaxation samples after the undershoot)
//! ```
//!
//! The elongated interval carries the single label-1 sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, RhythmRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub records: usize,
    pub samples_per_record: usize,
    pub baseline_ms: f64,
    /// Standard deviation of the per-beat Gaussian jitter.
    pub jitter_ms: f64,
    /// Expected spikes per 100 samples.
    pub spike_rate: f64,
    pub amplitude_min_ms: f64,
    pub amplitude_max_ms: f64,
    pub undershoot: f64,
    pub relaxation: usize,
    pub decay: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 74 records of 1491 samples (110334 in total), ~3% positives.
    fn default() -> Self {
        Self {
            records: 74,
            samples_per_record: 1491,
            baseline_ms: 800.0,
            jitter_ms: 15.0,
            spike_rate: 3.0,
            amplitude_min_ms: 30.0,
            amplitude_max_ms: 100.0,
            undershoot: 0.8,
            relaxation: 3,
            decay: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Samples touched by one spike.
    pub fn footprint(&self) -> usize {
        2 + self.relaxation
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Synth(m.to_owned()));
        if !(self.amplitude_min_ms > 0.0 && self.amplitude_min_ms <= self.amplitude_max_ms && self.amplitude_max_ms <= 100.0)
        {
            return bad("amplitude range must satisfy 0 < min <= max <= 100 ms");
        }
        if !(self.spike_rate >= 0.0 && self.spike_rate.is_finite()) {
            return bad("spike rate must be non-negative");
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return bad("jitter must be non-negative");
        }
        if self.samples_per_record == 0 {
            return bad("records need at least one sample");
        }
        if !(0.0..=1.0).contains(&self.undershoot) || !(0.0..1.0).contains(&self.decay) {
            return bad("undershoot must lie in [0, 1] and decay in [0, 1)");
        }
        Ok(())
    }

    /// Deviation template for amplitude `a`.
    pub fn template(&self, amplitude: f64) -> Vec<f64> {
        let mut dev = vec![amplitude, -self.undershoot * amplitude];
        let mut tail = self.undershoot * amplitude;
        for _ in 0..self.relaxation {
            tail *= self.decay;
            dev.push(tail);
        }
        dev
    }
}

/// Position and amplitude of one inserted spike.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spike {
    pub position: usize,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub record: RhythmRecord,
    pub spikes: Vec<Spike>,
    /// Jittered baseline before spikes and rounding.
    pub baseline: Vec<f64>,
}

/// Generates one record. Intervals are rounded to whole milliseconds and
/// times are their running sum.
pub fn synth_record(cfg: &SynthConfig, seed: u64, id: impl Into<String>) -> Result<SynthRecord, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.samples_per_record;

    let baseline: Vec<f64> = if cfg.jitter_ms > 0.0 {
        let noise = Normal::new(0.0, cfg.jitter_ms).expect("validated jitter");
        (0..n).map(|_| cfg.baseline_ms + noise.sample(&mut rng)).collect()
    } else {
        vec![cfg.baseline_ms; n]
    };

    let mut rr = baseline.clone();
    let mut labels = vec![0u8; n];
    let mut spikes = Vec::new();
    if cfg.spike_rate > 0.0 {
        let footprint = cfg.footprint();
        let mean_gap = (100.0 / cfg.spike_rate - footprint as f64).max(0.0);
        let gap = (mean_gap > 0.0).then(|| Exp::new(1.0 / mean_gap).expect("positive rate"));
        let mut cursor = 0usize;
        loop {
            let skip = gap.map_or(0.0, |d| d.sample(&mut rng)).round() as usize;
            let position = cursor + skip;
            if position + footprint > n {
                break;
            }
            let amplitude = if cfg.amplitude_min_ms < cfg.amplitude_max_ms {
                rng.gen_range(cfg.amplitude_min_ms..=cfg.amplitude_max_ms)
            } else {
                cfg.amplitude_max_ms
            };
            for (offset, dev) in cfg.template(amplitude).into_iter().enumerate() {
                rr[position + offset] += dev;
            }
            labels[position] = 1;
            spikes.push(Spike { position, amplitude });
            cursor = position + footprint;
        }
    }
    rr.iter_mut().for_each(|v| *v = v.round());

    let record = RhythmRecord::from_intervals(id, rr, labels)?;
    Ok(SynthRecord {
        record,
        spikes,
        baseline,
    })
}

/// Seed of record `index` derived from the corpus seed.
pub fn record_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `cfg.records` records with ids `"0"`, `"1"`, ….
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<RhythmRecord>, DataError> {
    (0..cfg.records)
        .map(|i| synth_record(cfg, record_seed(cfg.seed, i), i.to_string()).map(|s| s.record))
        .collect()
}
