//! `cardiospike`: synthetic data generation, training, batch detection and
//! streaming detection from one binary.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cardiospike", version, about = "Cardiospike detection in RR-interval rhythmograms")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [detector], [training], [synth] and [replay] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus CSV and its manifest.
    GenData(GenDataArgs),
    /// Train a detector, optionally with k-fold cross-validation.
    Train(TrainArgs),
    /// Label every sample of a CSV corpus with a trained detector.
    Detect(DetectArgs),
    /// Accept sensor streams and print spike events.
    Serve(ServeArgs),
    /// Stream a record to a serve endpoint as sensor packets.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct SynthFlags {
    #[arg(long)]
    pub records: Option<usize>,
    #[arg(long = "samples")]
    pub samples_per_record: Option<usize>,
    #[arg(long = "baseline")]
    pub baseline_ms: Option<f64>,
    #[arg(long = "jitter")]
    pub jitter_ms: Option<f64>,
    /// Expected spikes per 100 samples.
    #[arg(long)]
    pub spike_rate: Option<f64>,
    #[arg(long = "amplitude-min")]
    pub amplitude_min_ms: Option<f64>,
    #[arg(long = "amplitude-max")]
    pub amplitude_max_ms: Option<f64>,
    #[arg(long)]
    pub relaxation: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DetectorFlags {
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub stacks: Option<usize>,
    #[arg(long)]
    pub seg_len: Option<usize>,
    #[arg(long)]
    pub pad: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long = "alpha")]
    pub focal_alpha: Option<f64>,
    #[arg(long = "gamma")]
    pub focal_gamma: Option<f64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "holdout")]
    pub holdout_fraction: Option<f64>,
    /// Store parameters every N epochs in the checkpoint.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub synth: SynthFlags,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub cv: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub detector: DetectorFlags,
    #[command(flatten)]
    pub training: TrainFlags,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Corpus CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Checkpoint file [default: <out>/checkpoint.bin].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint entry to use.
    #[arg(long, default_value = "final")]
    pub key: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write per-sample time, rr and probability series.
    #[arg(long)]
    pub plot_data: bool,
    /// Expected architecture; any given value must match the checkpoint.
    #[command(flatten)]
    pub detector: DetectorFlags,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "final")]
    pub key: String,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write event lines here instead of standard output.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Exit after this many sessions.
    #[arg(long)]
    pub max_sessions: Option<usize>,
    /// Reader-to-detector queue depth in packets.
    #[arg(long, default_value_t = cardiospike::stream::QUEUE_DEPTH)]
    pub queue: usize,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Corpus CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Record id to replay [default: first record].
    #[arg(long)]
    pub record: Option<String>,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub connect: String,
    /// Sensor id on the wire [default: the record id when it fits].
    #[arg(long)]
    pub sensor: Option<String>,
    /// Packets per second; `inf` sends without pausing.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Probability that a packet starts a drop.
    #[arg(long)]
    pub drop: Option<f64>,
    /// Packets lost per drop.
    #[arg(long)]
    pub drop_burst: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match (cli.common.quiet, cli.common.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let file = config::FileConfig::load(cli.common.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&cli.common, file, a),
        Command::Train(a) => commands::train(&cli.common, file, a),
        Command::Detect(a) => commands::detect(&cli.common, file, a),
        Command::Serve(a) => commands::serve(&cli.common, file, a),
        Command::Replay(a) => commands::replay(&cli.common, file, a),
    }
}
