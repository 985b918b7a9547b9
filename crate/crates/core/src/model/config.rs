use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Shape of the backbone. Token ids `vocab_size - protein_vocab..vocab_size`
/// are the amino-acid and structure tokens; their embedding rows live in a
/// separate tensor so they can be trained on their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub protein_vocab: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_context: usize,
    pub mlp_ratio: usize,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Desk-scale default: 64 wide, 4 layers, 4 heads, 1024 positions.
    pub fn toy(vocab_size: usize, protein_vocab: usize) -> Self {
        Self {
            vocab_size,
            protein_vocab,
            hidden_dim: 64,
            n_layers: 4,
            n_heads: 4,
            max_context: 1024,
            mlp_ratio: 4,
            ln_eps: default_ln_eps(),
        }
    }

    /// The gradient-check configuration: 16 wide, 2 layers.
    pub fn tiny(vocab_size: usize, protein_vocab: usize, max_context: usize) -> Self {
        Self {
            vocab_size,
            protein_vocab,
            hidden_dim: 16,
            n_layers: 2,
            n_heads: 2,
            max_context,
            mlp_ratio: 2,
            ln_eps: default_ln_eps(),
        }
    }

    pub fn base_vocab(&self) -> usize {
        self.vocab_size - self.protein_vocab
    }

    pub fn mlp_dim(&self) -> usize {
        self.hidden_dim * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::invalid(m));
        if self.hidden_dim == 0 || self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.protein_vocab > self.vocab_size {
            return bad("protein_vocab exceeds vocab_size".into());
        }
        if self.max_context == 0 || self.mlp_ratio == 0 || self.n_layers == 0 {
            return bad("max_context, mlp_ratio and n_layers must be positive".into());
        }
        Ok(())
    }
}
