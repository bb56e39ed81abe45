//! Experiment config file. Every section and field is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splicegan::train::TrainConfig;
use splicegan::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub scale: f64,
    /// Directory of base PNGs; procedural bases when absent.
    pub bases: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            bases: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: String,
    /// Pixel threshold for binary masks.
    pub tau: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: "test".into(),
            tau: 0.5,
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let cfg: ExperimentConfig = serde_json::from_slice(&std::fs::read(path)?)?;
    cfg.train.validate()?;
    Ok(cfg)
}
