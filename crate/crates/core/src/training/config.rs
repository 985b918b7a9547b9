use std::path::{Path, PathBuf};

use pcc_tensor::AdamWConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Hyperparameters for one training run. Read from JSON; missing fields
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// 0 = backbone pretraining, 1 = LoRA stage, 2 = projection stage.
    pub stage: u8,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Shot counts sampled uniformly per stage-2 batch.
    pub n_values: Vec<usize>,
    pub x: usize,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Prompts start at a random position in `0..=position_jitter`.
    pub position_jitter: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// The frozen stage-1 checkpoint a stage-2 run starts from.
    pub stage1_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            lr: 2e-5,
            batch_size: 4,
            epochs: 1,
            seed: 0,
            lora_rank: 8,
            lora_alpha: 16.0,
            n_values: vec![1, 2, 4, 8, 16],
            x: 16,
            grad_clip: 1.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            position_jitter: 0,
            max_steps: None,
            stage1_checkpoint: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for the desk-scale toy model: a larger learning rate than
    /// the full-scale recipe, since the backbone is trained from scratch.
    pub fn toy(stage: u8) -> Self {
        let base = Self {
            stage,
            ..Self::default()
        };
        match stage {
            0 => Self {
                lr: 1e-3,
                epochs: 2,
                position_jitter: 512,
                ..base
            },
            1 => Self {
                lr: 5e-3,
                position_jitter: 256,
                ..base
            },
            _ => Self {
                lr: 1e-3,
                epochs: 3,
                n_values: vec![4],
                x: 8,
                ..base
            },
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(CoreError::invalid("lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(CoreError::invalid("batch_size must be at least 1"));
        }
        if self.stage > 2 {
            return Err(CoreError::invalid(format!("unknown stage {}", self.stage)));
        }
        if self.stage == 1 && self.lora_rank == 0 {
            return Err(CoreError::invalid("lora_rank must be positive"));
        }
        if self.stage == 2 && (self.n_values.is_empty() || self.x == 0) {
            return Err(CoreError::invalid("stage 2 needs n_values and x >= 1"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
