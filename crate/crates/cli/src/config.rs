//! Settings file and the flag > file > environment > default precedence.

use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;

pub const SEED_ENV: &str = "PROTEOKNIGHT_SEED";

/// Flat `key = value` TOML. Unknown keys are rejected so typos surface.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    // encode
    pub size: Option<u32>,
    pub radius: Option<f64>,
    pub point_size: Option<u32>,
    pub jobs: Option<usize>,
    pub policy: Option<String>,
    pub strict: Option<bool>,
    // split
    pub test_fraction: Option<f64>,
    pub delta_pvp: Option<usize>,
    pub delta_nonpvp: Option<usize>,
    pub auto_delta: Option<bool>,
    // train
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub dropout: Option<f64>,
    pub optimizer: Option<String>,
    pub input_size: Option<usize>,
    pub classes: Option<String>,
    // eval
    pub threshold: Option<f64>,
    // mcd and report
    pub passes: Option<usize>,
    pub rates: Option<Vec<f64>>,
    pub samples_per_category: Option<usize>,
    pub bins: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Seed from the flag, then this file, then `PROTEOKNIGHT_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => match v.trim().parse() {
                Ok(s) => Ok(s),
                Err(_) => bail!("{SEED_ENV}='{v}' is not an unsigned integer"),
            },
            Err(_) => Ok(0),
        }
    }
}

/// First of flag, file value, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
