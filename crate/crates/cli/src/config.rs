use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pcc_core::dataset::SyntheticTaskSpec;
use pcc_core::model::ModelConfig;
use pcc_core::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// The shared JSON config file. Every field is optional; flags override
/// it and built-in defaults fill the rest.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub x: Option<usize>,
    pub n: Option<usize>,
    pub strategy: Option<String>,
    pub split: Option<String>,
    pub max_new_tokens: Option<usize>,
    pub x_values: Option<Vec<usize>>,
    pub n_values: Option<Vec<usize>>,
    /// Partial overrides of the synthetic task spec.
    pub dataset: Option<Value>,
    /// Partial overrides of the toy model shape.
    pub model: Option<Value>,
    pub pretrain: Option<Value>,
    pub stage1: Option<Value>,
    pub stage2: Option<Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn dataset_spec(&self, seed: u64) -> Result<SyntheticTaskSpec> {
        let mut spec: SyntheticTaskSpec = overlay(&SyntheticTaskSpec::default(), self.dataset.as_ref(), "dataset")?;
        spec.seed = seed;
        Ok(spec)
    }

    pub fn model_config(&self, vocab_size: usize, protein_vocab: usize) -> Result<ModelConfig> {
        let mut cfg: ModelConfig = overlay(&ModelConfig::toy(vocab_size, protein_vocab), self.model.as_ref(), "model")?;
        cfg.vocab_size = vocab_size;
        cfg.protein_vocab = protein_vocab;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Toy defaults for `stage`, then the file's section, then `seed`.
    pub fn train_config(&self, stage: u8, seed: u64) -> Result<TrainConfig> {
        let (section, name) = match stage {
            0 => (&self.pretrain, "pretrain"),
            1 => (&self.stage1, "stage1"),
            _ => (&self.stage2, "stage2"),
        };
        let mut cfg: TrainConfig = overlay(&TrainConfig::toy(stage), section.as_ref(), name)?;
        cfg.stage = stage;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `base` with the keys of `patch` replaced.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>, what: &str) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(patch) = patch {
        let (Value::Object(dst), Value::Object(src)) = (&mut value, patch) else {
            bail!("config section {what:?} must be an object");
        };
        for (k, v) in src {
            if !dst.contains_key(k) {
                bail!("unknown field {k:?} in config section {what:?}");
            }
            dst.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(value).with_context(|| format!("config section {what:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_patch_the_toy_defaults() {
        let cfg: FileConfig = serde_json::from_str(r#"{"stage1": {"epochs": 3}}"#).unwrap();
        let t = cfg.train_config(1, 9).unwrap();
        assert_eq!((t.epochs, t.lr, t.seed), (3, TrainConfig::toy(1).lr, 9));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"sed": 1}"#).is_err());
        let cfg: FileConfig = serde_json::from_str(r#"{"stage2": {"xx": 3}}"#).unwrap();
        assert!(cfg.train_config(2, 0).is_err());
    }

    #[test]
    fn model_overlay_keeps_vocab_sizes() {
        let cfg: FileConfig = serde_json::from_str(r#"{"model": {"hidden_dim": 32, "vocab_size": 3}}"#).unwrap();
        let m = cfg.model_config(600, 532).unwrap();
        assert_eq!((m.hidden_dim, m.vocab_size), (32, 600));
    }
}
