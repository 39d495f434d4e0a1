use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, ensure, Context, Result};
use cardiospike::data::{corpus_stats, parse_csv, synth_corpus, write_csv, write_csv_with_predictions, RhythmRecord, SynthConfig};
use cardiospike::model::{fold_key, Checkpoint, DetectorConfig, DetectorParams};
use cardiospike::stream::{replay_sensor, rr_to_wire, serve as serve_loop, ReplayOptions, SensorId, ServeOptions};
use cardiospike::training::{
    cross_validate, mean_f_score, record_probabilities, threshold, train as train_model, write_report, Confusion,
    TrainConfig, TrainError,
};
use serde::Serialize;

use crate::config::{banner, overlay, FileConfig};
use crate::{Common, DetectArgs, DetectorFlags, GenDataArgs, ReplayArgs, ServeArgs, TrainArgs};

/// Output files staged next to their destination and renamed into place
/// together once everything has been written.
struct Staged {
    dir: PathBuf,
    files: Vec<(tempfile::NamedTempFile, PathBuf)>,
}

impl Staged {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<&File>) -> std::io::Result<()>) -> Result<PathBuf> {
        let tmp = tempfile::Builder::new()
            .prefix(&format!(".{name}."))
            .tempfile_in(&self.dir)
            .with_context(|| format!("creating temporary file in {}", self.dir.display()))?;
        let target = self.dir.join(name);
        {
            let mut w = BufWriter::new(tmp.as_file());
            f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", target.display()))?;
        }
        self.files.push((tmp, target.clone()));
        Ok(target)
    }

    fn commit(self) -> Result<()> {
        for (tmp, target) in self.files {
            tmp.persist(&target).with_context(|| format!("moving output into {}", target.display()))?;
        }
        Ok(())
    }
}

fn resolve_seed(common: &Common, file: &FileConfig) -> u64 {
    common.seed.or(file.seed).unwrap_or(0)
}

fn resolve_detector(base: DetectorConfig, flags: &DetectorFlags) -> DetectorConfig {
    let mut cfg = base;
    overlay!(cfg, flags, { kernel_size, channels, hidden, side, layers, stacks, seg_len, pad });
    cfg
}

fn load_corpus(path: &Path) -> Result<Vec<RhythmRecord>> {
    let parsed = parse_csv(path).with_context(|| format!("reading {}", path.display()))?;
    for issue in &parsed.issues {
        log::warn!("{}: {issue}", path.display());
    }
    ensure!(!parsed.records.is_empty(), "{} contains no valid records", path.display());
    let stats = corpus_stats(&parsed.records);
    log::info!(
        "{}: {} records, {} samples, {} positives",
        path.display(),
        stats.records,
        stats.samples,
        stats.positives
    );
    Ok(parsed.records)
}

fn load_entry(common: &Common, checkpoint: &Option<PathBuf>, key: &str) -> Result<(DetectorConfig, DetectorParams)> {
    let path = checkpoint.clone().unwrap_or_else(|| common.out.join("checkpoint.bin"));
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let Some(entry) = ckpt.get(key) else {
        let keys: Vec<&str> = ckpt.keys().collect();
        bail!("checkpoint {} has no entry {key:?}; available: {}", path.display(), keys.join(", "));
    };
    Ok((entry.config, entry.params.clone()))
}

#[derive(Serialize)]
struct GenDataRun<'a> {
    out: &'a Path,
    synth: &'a SynthConfig,
}

#[derive(Serialize)]
struct Manifest<'a> {
    synth: &'a SynthConfig,
    stats: ManifestStats,
}

#[derive(Serialize)]
struct ManifestStats {
    records: usize,
    samples: usize,
    positives: usize,
}

pub fn gen_data(common: &Common, file: FileConfig, args: GenDataArgs) -> Result<()> {
    let mut synth = file.synth.clone();
    let flags = &args.synth;
    overlay!(synth, flags, {
        records, samples_per_record, baseline_ms, jitter_ms, spike_rate, amplitude_min_ms, amplitude_max_ms, relaxation
    });
    synth.seed = resolve_seed(common, &file);
    banner("gen-data", &GenDataRun { out: &common.out, synth: &synth })?;

    let corpus = synth_corpus(&synth)?;
    let stats = corpus_stats(&corpus);
    let manifest = Manifest {
        synth: &synth,
        stats: ManifestStats {
            records: stats.records,
            samples: stats.samples,
            positives: stats.positives,
        },
    };
    let manifest = toml::to_string(&manifest)?;
    let mut out = Staged::new(&common.out)?;
    let csv = out.write("corpus.csv", |w| write_csv(w, &corpus))?;
    out.write("manifest.toml", |w| w.write_all(manifest.as_bytes()))?;
    out.commit()?;
    println!(
        "wrote {}: {} records, {} samples, {} positives ({:.2}%)",
        csv.display(),
        stats.records,
        stats.samples,
        stats.positives,
        100.0 * stats.positive_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainRun<'a> {
    input: &'a Path,
    out: &'a Path,
    cv: Option<usize>,
    detector: &'a DetectorConfig,
    training: &'a TrainConfig,
}

fn resolve_training(common: &Common, file: &FileConfig, flags: &crate::TrainFlags, threshold: Option<f64>) -> TrainConfig {
    let mut tcfg = file.training.clone();
    overlay!(tcfg, flags, {
        focal_alpha, focal_gamma, learning_rate, weight_decay, epochs, batch_size, holdout_fraction, checkpoint_every
    });
    if let Some(t) = threshold {
        tcfg.threshold = t;
    }
    tcfg.seed = resolve_seed(common, file);
    tcfg
}

fn folds_table(w: &mut impl Write, rows: &[(String, usize, Confusion)]) -> std::io::Result<()> {
    writeln!(w, "fold\trecords\ttp\tfp\tfn\ttn\tprecision\trecall\tf_score")?;
    for (fold, records, c) in rows {
        writeln!(
            w,
            "{fold}\t{records}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            c.precision(),
            c.recall(),
            c.f_score()
        )?;
    }
    Ok(())
}

pub fn train(common: &Common, file: FileConfig, args: TrainArgs) -> Result<()> {
    let dcfg = resolve_detector(file.detector, &args.detector);
    let tcfg = resolve_training(common, &file, &args.training, args.threshold);
    banner(
        "train",
        &TrainRun {
            input: &args.input,
            out: &common.out,
            cv: args.cv,
            detector: &dcfg,
            training: &tcfg,
        },
    )?;
    dcfg.validate()?;
    tcfg.validate()?;
    let corpus = load_corpus(&args.input)?;

    let diverged = |e: TrainError| -> anyhow::Error {
        if let TrainError::Diverged { epoch, last_good, .. } = &e {
            let mut ckpt = Checkpoint::new();
            ckpt.insert("last_good", dcfg, (**last_good).clone());
            let path = common.out.join("last_good.bin");
            let saved = std::fs::create_dir_all(&common.out)
                .and_then(|_| File::create(&path))
                .and_then(|f| ckpt.write_to(BufWriter::new(f)));
            match saved {
                Ok(()) => log::error!("parameters before epoch {epoch} saved to {}", path.display()),
                Err(io) => log::error!("could not save last good parameters: {io}"),
            }
        }
        e.into()
    };

    let mut ckpt = Checkpoint::new();
    let mut reports: Vec<(String, Vec<_>)> = Vec::new();
    let mut fold_rows = Vec::new();
    if let Some(k) = args.cv {
        let runs = cross_validate(&corpus, &dcfg, &tcfg, k).map_err(diverged)?;
        for run in &runs {
            let r = &run.report;
            for (epoch, params) in &run.outcome.snapshots {
                ckpt.insert(fold_key(r.fold, *epoch), dcfg, params.clone());
            }
            ckpt.insert(fold_key(r.fold, tcfg.epochs), dcfg, run.outcome.params.clone());
            reports.push((r.fold.to_string(), r.history.clone()));
            fold_rows.push((r.fold.to_string(), r.test_records.len(), r.confusion));
            println!(
                "fold {}: precision {:.4} recall {:.4} f-score {:.4}",
                r.fold, r.precision, r.recall, r.f_score
            );
        }
        let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
        let mut pooled = Confusion::default();
        reports.iter().for_each(|r| pooled.merge(&r.confusion));
        fold_rows.push(("pooled".into(), corpus.len(), pooled));
        println!("mean f-score over {k} folds: {:.4}", mean_f_score(&reports));
    }

    let outcome = train_model(&corpus, &dcfg, &tcfg).map_err(diverged)?;
    for (epoch, params) in &outcome.snapshots {
        ckpt.insert(format!("final_epoch{epoch}"), dcfg, params.clone());
    }
    ckpt.insert("final", dcfg, outcome.params.clone());
    if let Some(last) = outcome.history.last() {
        println!("final model: held-out loss {:.5}, f-score {:.4}", last.loss, last.f_score);
    }
    reports.push(("final".into(), outcome.history));

    let mut out = Staged::new(&common.out)?;
    let ckpt_path = out.write("checkpoint.bin", |w| ckpt.write_to(w))?;
    out.write("report.tsv", |w| write_report(w, reports.iter().map(|(l, h)| (l, h.as_slice()))))?;
    if args.cv.is_some() {
        out.write("folds.tsv", |w| folds_table(w, &fold_rows))?;
    }
    out.commit()?;
    println!("wrote {} ({} entries)", ckpt_path.display(), ckpt.entries().len());
    Ok(())
}

fn check_architecture(found: &DetectorConfig, flags: &DetectorFlags) -> Result<()> {
    let expected = resolve_detector(*found, flags);
    ensure!(
        expected == *found,
        "detector flags {expected:?} do not match the checkpoint architecture {found:?}"
    );
    Ok(())
}

#[derive(Serialize)]
struct DetectRun<'a> {
    input: &'a Path,
    out: &'a Path,
    key: &'a str,
    threshold: f64,
    plot_data: bool,
    detector: &'a DetectorConfig,
}

pub fn detect(common: &Common, file: FileConfig, args: DetectArgs) -> Result<()> {
    let (dcfg, params) = load_entry(common, &args.checkpoint, &args.key)?;
    check_architecture(&dcfg, &args.detector)?;
    let thr = args.threshold.unwrap_or(file.training.threshold);
    ensure!(thr > 0.0 && thr < 1.0, "threshold {thr} outside (0, 1)");
    banner(
        "detect",
        &DetectRun {
            input: &args.input,
            out: &common.out,
            key: &args.key,
            threshold: thr,
            plot_data: args.plot_data,
            detector: &dcfg,
        },
    )?;
    let corpus = load_corpus(&args.input)?;

    let mut probs = Vec::with_capacity(corpus.len());
    let mut preds = Vec::with_capacity(corpus.len());
    let mut confusion = Confusion::default();
    for rec in &corpus {
        let p = record_probabilities(&params, &dcfg, &rec.rr)?;
        let labels = threshold(&p, thr);
        confusion.add(&labels, &rec.labels)?;
        probs.push(p);
        preds.push(labels);
    }

    let mut out = Staged::new(&common.out)?;
    let path = out.write("predictions.csv", |w| write_csv_with_predictions(w, &corpus, &preds))?;
    if args.plot_data {
        out.write("plot.tsv", |w| {
            writeln!(w, "id\ttime_ms\trr_ms\tprobability\tprediction")?;
            for ((rec, p), pred) in corpus.iter().zip(&probs).zip(&preds) {
                for i in 0..rec.len() {
                    writeln!(w, "{}\t{}\t{}\t{:.6}\t{}", rec.id, rec.times[i], rec.rr[i], p[i], pred[i])?;
                }
            }
            Ok(())
        })?;
    }
    out.commit()?;
    println!(
        "wrote {}: {} predicted positives; against labels precision {:.4} recall {:.4} f-score {:.4}",
        path.display(),
        confusion.tp + confusion.fp,
        confusion.precision(),
        confusion.recall(),
        confusion.f_score()
    );
    Ok(())
}

#[derive(Serialize)]
struct ServeRun<'a> {
    listen: &'a str,
    key: &'a str,
    threshold: f64,
    queue: usize,
    max_sessions: Option<usize>,
    detector: &'a DetectorConfig,
}

pub fn serve(common: &Common, file: FileConfig, args: ServeArgs) -> Result<()> {
    let (dcfg, params) = load_entry(common, &args.checkpoint, &args.key)?;
    let thr = args.threshold.unwrap_or(file.training.threshold);
    banner(
        "serve",
        &ServeRun {
            listen: &args.listen,
            key: &args.key,
            threshold: thr,
            queue: args.queue,
            max_sessions: args.max_sessions,
            detector: &dcfg,
        },
    )?;
    let listener = TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
    log::info!("listening on {}", listener.local_addr()?);

    let opts = ServeOptions {
        threshold: thr,
        queue: args.queue,
        max_sessions: args.max_sessions,
    };
    let sink: Box<dyn Write + Send> = match &args.events {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let sink = Mutex::new(sink);
    let sessions = serve_loop(&listener, &params, &dcfg, &opts, &sink, &shutdown)?;
    for s in &sessions {
        log::info!(
            "sensor {}: {} packets, {} rejected, {} samples, {} discontinuities, {} events{}",
            s.sensor.as_deref().unwrap_or("?"),
            s.packets,
            s.rejected,
            s.samples,
            s.discontinuities,
            s.events,
            if s.disconnected { ", disconnected" } else { "" }
        );
    }
    if shutdown.load(Ordering::SeqCst) {
        log::info!("interrupted; {} sessions completed", sessions.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct ReplayRun<'a> {
    input: &'a Path,
    record: &'a str,
    sensor: &'a str,
    connect: &'a str,
    speed: f64,
    drop: f64,
    drop_burst: usize,
    seed: u64,
}

pub fn replay(common: &Common, file: FileConfig, args: ReplayArgs) -> Result<()> {
    let mut opts: ReplayOptions = file.replay.options(resolve_seed(common, &file));
    if let Some(s) = args.speed {
        opts.speed = s;
    }
    if let Some(d) = args.drop {
        opts.drop = d;
    }
    if let Some(b) = args.drop_burst {
        opts.drop_burst = b;
    }
    opts.validate()?;
    let corpus = load_corpus(&args.input)?;
    let rec = match &args.record {
        Some(id) => corpus
            .iter()
            .find(|r| &r.id == id)
            .with_context(|| format!("record {id:?} not found in {}", args.input.display()))?,
        None => &corpus[0],
    };
    let sensor = match &args.sensor {
        Some(s) => SensorId::new(s)?,
        None => SensorId::new(&rec.id).or_else(|_| SensorId::new("sensor"))?,
    };
    banner(
        "replay",
        &ReplayRun {
            input: &args.input,
            record: &rec.id,
            sensor: sensor.as_str(),
            connect: &args.connect,
            speed: opts.speed,
            drop: opts.drop,
            drop_burst: opts.drop_burst,
            seed: opts.seed,
        },
    )?;
    let rr = rr_to_wire(&rec.rr)?;
    let stats = replay_sensor(&args.connect, sensor, &rr, &opts).with_context(|| format!("replaying to {}", args.connect))?;
    println!(
        "replayed record {} as sensor {sensor}: {} packets, {} sent, {} dropped",
        rec.id, stats.packets, stats.sent, stats.dropped
    );
    Ok(())
}
