//! Shared fixtures for the benchmarks.

use cardiospike::data::{synth_record, SynthConfig};
use cardiospike::{DetectorConfig, DetectorParams};

/// Reference-architecture parameters with a fixed seed.
pub fn reference_params() -> (DetectorConfig, DetectorParams) {
    let cfg = DetectorConfig::reference();
    let params = DetectorParams::init(&cfg, 0).expect("reference config is valid");
    (cfg, params)
}

/// One synthetic record of `samples` intervals.
pub fn record_rr(samples: usize) -> Vec<f64> {
    let cfg = SynthConfig {
        samples_per_record: samples,
        ..SynthConfig::default()
    };
    synth_record(&cfg, 1, "bench").expect("default synth config is valid").record.rr
}
