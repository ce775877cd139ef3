use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use turducken_core::decode::DecodeOpts;
use turducken_core::metrics::EvalConfig;
use turducken_core::model::{ModelConfig, TrainConfig};

/// Defaults read from `--config-file`. Every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub checker: Option<String>,
    pub checker_timeout_ms: Option<u64>,
    /// Address used by `--scorer bridge` without an explicit address.
    pub bridge_addr: Option<String>,
    pub grammar: Option<String>,
    pub prompt: Option<String>,
    pub decode: Option<DecodeOpts>,
    pub evaluate: Option<EvalConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// `model`/`train` sections of a `train-toy --config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
}
