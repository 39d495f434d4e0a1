//! Minibatch training loop and record-level cross-validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{window, RhythmRecord};
use crate::graph::Graph;
use crate::model::{detector_forward, DetectorConfig, DetectorParams};
use crate::tensor::Tensor;

use super::{adamw_step_params, evaluate, focal_loss_masked, kfold_split, Confusion, OptimizerState, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability at or above which a sample is called a spike.
    pub threshold: f64,
    /// Share of records held out for per-epoch monitoring in [`train`].
    pub holdout_fraction: f64,
    /// Keep a parameter snapshot every this many epochs; 0 keeps none.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            threshold: 0.5,
            holdout_fraction: 0.1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let checks = [
            (self.focal_alpha > 0.0 && self.focal_alpha <= 1.0, "focal_alpha must lie in (0, 1]"),
            (self.focal_gamma >= 0.0 && self.focal_gamma.is_finite(), "focal_gamma must be >= 0"),
            (self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be > 0"),
            (self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "weight_decay must be >= 0"),
            (self.beta1 > 0.0 && self.beta1 < 1.0, "beta1 must lie in (0, 1)"),
            (self.beta2 > 0.0 && self.beta2 < 1.0, "beta2 must lie in (0, 1)"),
            (self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon must be > 0"),
            (self.batch_size > 0, "batch_size must be > 0"),
            (self.threshold > 0.0 && self.threshold < 1.0, "threshold must lie in (0, 1)"),
            ((0.0..1.0).contains(&self.holdout_fraction), "holdout_fraction must lie in [0, 1)"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(TrainError::InvalidConfig((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Statistics after one epoch. Epoch 0 describes the initial parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample focal loss over the training batches.
    pub train_loss: f64,
    /// Mean per-sample focal loss on the monitor records.
    pub loss: f64,
    /// F-score on the monitor records.
    pub f_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: DetectorParams,
    pub history: Vec<EpochStats>,
    /// `(epoch, parameters)` at the configured cadence.
    pub snapshots: Vec<(usize, DetectorParams)>,
}

struct Batchable {
    input: Vec<f64>,
    target: Vec<u8>,
    mask: Vec<bool>,
}

fn segments_of(records: &[RhythmRecord], cfg: &DetectorConfig) -> Result<Vec<Batchable>, TrainError> {
    let ts = cfg.target_len();
    let mut out = Vec::new();
    for rec in records {
        for seg in window(rec, cfg.seg_len, cfg.pad)? {
            out.push(Batchable {
                input: seg.input,
                target: seg.target,
                mask: (0..ts).map(|j| j < seg.valid).collect(),
            });
        }
    }
    Ok(out)
}

/// One optimizer step on a batch. Returns `(mean loss, masked samples)`.
fn train_batch(
    params: &mut DetectorParams,
    state: &mut OptimizerState,
    batch: &[&Batchable],
    dcfg: &DetectorConfig,
    tcfg: &TrainConfig,
) -> Result<(f64, usize), TrainError> {
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let input: Vec<f64> = batch.iter().flat_map(|b| b.input.iter().copied()).collect();
    let target: Vec<u8> = batch.iter().flat_map(|b| b.target.iter().copied()).collect();
    let mask: Vec<bool> = batch.iter().flat_map(|b| b.mask.iter().copied()).collect();
    let x = g.constant(Tensor::new(vec![batch.len(), dcfg.seg_len, 1], input)?);
    let logits = detector_forward(&mut g, x, &vars, dcfg)?;
    let loss = focal_loss_masked(&mut g, logits, &target, Some(&mask), tcfg.focal_alpha, tcfg.focal_gamma)?;
    let value = g.data(loss)[0];
    if !value.is_finite() {
        return Err(TrainError::NonFiniteLoss(value));
    }
    g.backward(loss)?;
    let grads = vars.grads(&g);
    adamw_step_params(params, &grads, state, tcfg)?;
    Ok((value, mask.iter().filter(|&&m| m).count()))
}

/// Trains on `train_records`, scoring `monitor` after every epoch.
pub fn fit(
    train_records: &[RhythmRecord],
    monitor: &[RhythmRecord],
    dcfg: &DetectorConfig,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    dcfg.validate()?;
    tcfg.validate()?;
    if train_records.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let segments = segments_of(train_records, dcfg)?;
    let mut params = DetectorParams::init(dcfg, tcfg.seed)?;
    let mut state = OptimizerState::for_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5EED_0F_BA7C4);
    let mut order: Vec<usize> = (0..segments.len()).collect();

    let score = |params: &DetectorParams, epoch: usize, train_loss: f64| -> Result<EpochStats, TrainError> {
        let eval = evaluate(params, dcfg, monitor, tcfg)?;
        Ok(EpochStats {
            epoch,
            train_loss,
            loss: eval.loss,
            f_score: eval.confusion.f_score(),
        })
    };

    let initial = evaluate(&params, dcfg, train_records, tcfg)?.loss;
    let mut history = vec![score(&params, 0, initial)?];
    let mut snapshots = Vec::new();
    for epoch in 1..=tcfg.epochs {
        let last_good = params.clone();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&Batchable> = chunk.iter().map(|&i| &segments[i]).collect();
            match train_batch(&mut params, &mut state, &batch, dcfg, tcfg) {
                Ok((loss, n)) => {
                    total += loss * n as f64;
                    count += n;
                }
                Err(e @ (TrainError::NonFiniteLoss(_) | TrainError::NonFiniteGradient { .. })) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: e.to_string(),
                        last_good: Box::new(last_good),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        let stats = score(&params, epoch, total / count as f64)?;
        log::debug!(
            "epoch {epoch}: train loss {:.5}, monitor loss {:.5}, f-score {:.4}",
            stats.train_loss,
            stats.loss,
            stats.f_score
        );
        history.push(stats);
        if tcfg.checkpoint_every > 0 && epoch % tcfg.checkpoint_every == 0 {
            snapshots.push((epoch, params.clone()));
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        snapshots,
    })
}

/// Record indices `(train, monitor)` for [`train`]: a seeded
/// `holdout_fraction` of the records (at least one when there are two or
/// more) is monitored. A single record monitors itself.
pub fn holdout_split(n: usize, tcfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    if n < 2 || tcfg.holdout_fraction == 0.0 {
        return (order.clone(), order);
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x401D_0u64));
    let held = ((n as f64 * tcfg.holdout_fraction).round() as usize).clamp(1, n - 1);
    let monitor = order.split_off(n - held);
    (order, monitor)
}

/// Trains on the corpus minus a held-out monitoring slice.
pub fn train(corpus: &[RhythmRecord], dcfg: &DetectorConfig, tcfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (tr, mon) = holdout_split(corpus.len(), tcfg);
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    fit(&pick(&tr), &pick(&mon), dcfg, tcfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    /// Ids of the records tested in this fold.
    pub test_records: Vec<String>,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Per-epoch statistics; the monitor is the test fold.
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldRun {
    pub report: FoldReport,
    pub outcome: TrainOutcome,
}

/// Seed used for fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// `k` independent models, each tested on one record fold. Folds run in
/// parallel; results are in fold order.
pub fn cross_validate(
    corpus: &[RhythmRecord],
    dcfg: &DetectorConfig,
    tcfg: &TrainConfig,
    k: usize,
) -> Result<Vec<FoldRun>, TrainError> {
    dcfg.validate()?;
    tcfg.validate()?;
    let folds = kfold_split(corpus.len(), k, tcfg.seed)?;
    folds
        .par_iter()
        .enumerate()
        .map(|(fold, test_idx)| {
            let test: Vec<RhythmRecord> = test_idx.iter().map(|&i| corpus[i].clone()).collect();
            let train_set: Vec<RhythmRecord> = (0..corpus.len())
                .filter(|i| !test_idx.contains(i))
                .map(|i| corpus[i].clone())
                .collect();
            let cfg = TrainConfig {
                seed: fold_seed(tcfg.seed, fold),
                ..tcfg.clone()
            };
            let outcome = fit(&train_set, &test, dcfg, &cfg)?;
            let confusion = evaluate(&outcome.params, dcfg, &test, &cfg)?.confusion;
            let report = FoldReport {
                fold,
                test_records: test.iter().map(|r| r.id.clone()).collect(),
                confusion,
                precision: confusion.precision(),
                recall: confusion.recall(),
                f_score: confusion.f_score(),
                history: outcome.history.clone(),
            };
            log::info!("fold {fold}: f-score {:.4}", report.f_score);
            Ok(FoldRun { report, outcome })
        })
        .collect()
}

pub fn mean_f_score(reports: &[FoldReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().map(|r| r.f_score).sum::<f64>() / reports.len() as f64
}

pub const REPORT_HEADER: &str = "fold\tepoch\ttrain_loss\tloss\tf_score";

/// Tab-separated training report, one line per fold and epoch.
pub fn write_report<'a, L: std::fmt::Display>(
    mut w: impl Write,
    folds: impl IntoIterator<Item = (L, &'a [EpochStats])>,
) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for (fold, history) in folds {
        for s in history {
            writeln!(w, "{fold}\t{}\t{:.6}\t{:.6}\t{:.6}", s.epoch, s.train_loss, s.loss, s.f_score)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthConfig};

    fn tiny() -> DetectorConfig {
        DetectorConfig {
            kernel_size: 3,
            channels: 4,
            hidden: 6,
            side: 5,
            layers: 2,
            stacks: 1,
            seg_len: 16,
            pad: 2,
            classes: 1,
        }
    }

    fn corpus(records: usize, samples: usize) -> Vec<RhythmRecord> {
        synth_corpus(&SynthConfig {
            records,
            samples_per_record: samples,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(train(&[], &tiny(), &quick(1)), Err(TrainError::EmptyCorpus)));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig {
            threshold: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn deterministic_and_history_shaped() {
        let data = corpus(4, 120);
        let a = train(&data, &tiny(), &quick(2)).unwrap();
        let b = train(&data, &tiny(), &quick(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 3);
        assert!(a.history.iter().all(|s| s.loss.is_finite() && s.train_loss.is_finite()));
    }

    #[test]
    fn loss_drops_after_first_epoch() {
        let data = corpus(6, 300);
        let out = train(&data, &tiny(), &quick(1)).unwrap();
        assert!(out.history[1].train_loss < out.history[0].train_loss, "{:?}", out.history);
    }

    #[test]
    fn all_negative_labels_learn_to_stay_quiet() {
        let mut data = corpus(3, 150);
        data.iter_mut().for_each(|r| r.labels.iter_mut().for_each(|l| *l = 0));
        let out = train(&data, &tiny(), &quick(10)).unwrap();
        for r in &data {
            let p = super::super::record_probabilities(&out.params, &tiny(), &r.rr).unwrap();
            let max = p.iter().cloned().fold(0.0, f64::max);
            assert!(max < 0.5, "{max}");
        }
    }

    #[test]
    fn snapshots_follow_cadence() {
        let data = corpus(2, 60);
        let cfg = TrainConfig {
            checkpoint_every: 2,
            ..quick(5)
        };
        let out = train(&data, &tiny(), &cfg).unwrap();
        assert_eq!(out.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 4]);
    }

    #[test]
    fn holdout_is_disjoint() {
        let (tr, mon) = holdout_split(74, &TrainConfig::default());
        assert_eq!(mon.len(), 7);
        assert!(mon.iter().all(|i| !tr.contains(i)));
        assert_eq!(holdout_split(1, &TrainConfig::default()), (vec![0], vec![0]));
    }

    #[test]
    fn two_fold_minimal() {
        let data = corpus(2, 60);
        let runs = cross_validate(&data, &tiny(), &quick(1), 2).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].report.fold, 0);
        assert_ne!(runs[0].report.test_records, runs[1].report.test_records);
    }

    #[test]
    fn report_format() {
        let h = [EpochStats {
            epoch: 0,
            train_loss: 0.5,
            loss: 0.25,
            f_score: 0.0,
        }];
        let mut buf = Vec::new();
        write_report(&mut buf, [(3, &h[..])]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "fold\tepoch\ttrain_loss\tloss\tf_score\n3\t0\t0.500000\t0.250000\t0.000000\n"
        );
    }
}
