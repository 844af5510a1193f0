use std::path::{Path, PathBuf};

use rnnt_core::data::SynthConfig;
use rnnt_core::decode::DecodeConfig;
use rnnt_core::model::ModelConfig;
use rnnt_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub charset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// One JSON document, one key per module. Free-form notes go under
/// `comment` and are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<Value>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(m) = &self.model {
            m.validate()?;
        }
        self.train.validate()?;
        self.synth.validate()?;
        self.decode.validate()?;
        Ok(())
    }

    /// The model section, or the default model sized to `vocab_size`.
    pub fn model_or_default(&self, vocab_size: usize) -> ModelConfig {
        self.model.clone().unwrap_or(ModelConfig {
            vocab_size,
            ..ModelConfig::default()
        })
    }
}

/// First place where two JSON values disagree, as `path: left vs right`.
pub fn first_difference(left: &Value, right: &Value, path: &str) -> Option<String> {
    match (left, right) {
        (Value::Object(a), Value::Object(b)) => {
            let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().find_map(|k| {
                let p = format!("{path}.{k}");
                match (a.get(k), b.get(k)) {
                    (Some(x), Some(y)) => first_difference(x, y, &p),
                    (x, y) => Some(format!("{p}: {} vs {}", show(x), show(y))),
                }
            })
        }
        (Value::Array(a), Value::Array(b)) => {
            let n = a.len().max(b.len());
            (0..n).find_map(|i| {
                let p = format!("{path}[{i}]");
                match (a.get(i), b.get(i)) {
                    (Some(x), Some(y)) => first_difference(x, y, &p),
                    (x, y) => Some(format!("{p}: {} vs {}", show(x), show(y))),
                }
            })
        }
        (a, b) if a == b => None,
        (a, b) => Some(format!("{path}: {a} vs {b}")),
    }
}

fn show(v: Option<&Value>) -> String {
    v.map_or_else(|| "(absent)".to_string(), |v| v.to_string())
}
