//! Layered run configuration: command-line flags over a TOML file over
//! built-in defaults.

use std::path::Path;

use anyhow::{Context, Result};
use cardiospike::data::SynthConfig;
use cardiospike::model::DetectorConfig;
use cardiospike::stream::ReplayOptions;
use cardiospike::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Contents of a `--config` file. Every table and key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub detector: DetectorConfig,
    pub training: TrainConfig,
    pub synth: SynthConfig,
    pub replay: ReplayFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayFile {
    /// Packets per second multiplier; 0 means as fast as possible.
    pub speed: f64,
    pub drop: f64,
    pub drop_burst: usize,
}

impl Default for ReplayFile {
    fn default() -> Self {
        Self {
            speed: 0.0,
            drop: 0.0,
            drop_burst: 1,
        }
    }
}

impl ReplayFile {
    pub fn options(&self, seed: u64) -> ReplayOptions {
        ReplayOptions {
            speed: if self.speed == 0.0 { f64::INFINITY } else { self.speed },
            drop: self.drop,
            drop_burst: self.drop_burst,
            seed,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Overwrites `$target.$field` with each flag that was given.
macro_rules! overlay {
    ($target:expr, $flags:expr, { $($field:ident),* $(,)? }) => {
        $( if let Some(v) = $flags.$field.clone() { $target.$field = v; } )*
    };
}
pub(crate) use overlay;

/// Logs the fully resolved configuration of a run.
pub fn banner<T: Serialize>(command: &str, resolved: &T) -> Result<()> {
    let text = toml::to_string(resolved).context("serializing resolved config")?;
    log::info!("{command}: resolved configuration\n{}", text.trim_end());
    Ok(())
}
