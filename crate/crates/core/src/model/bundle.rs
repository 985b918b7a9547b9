use std::collections::BTreeMap;

use pcc_tensor::{Real, SplitMix64, Tensor};

use super::config::ModelConfig;
use super::lora::LoraConfig;
use crate::error::{CoreError, Result};
use crate::hashing::{sha256_f32, Digest32};

/// Parameter names. Linear weights are stored `[in × out]` and applied as
/// `x · W + b`.
pub mod names {
    pub const EMBED_BASE: &str = "tok_embed.base";
    pub const EMBED_PROTEIN: &str = "tok_embed.protein";
    pub const POS_EMBED: &str = "pos_embed";
    pub const LN_F_GAIN: &str = "ln_f.gain";
    pub const LN_F_BIAS: &str = "ln_f.bias";
    pub const PROJ_WEIGHT: &str = "projection.weight";
    pub const PROJ_BIAS: &str = "projection.bias";
    pub const LORA_PREFIX: &str = "lora.";

    pub fn layer(i: usize, rest: &str) -> String {
        format!("layers.{i}.{rest}")
    }

    /// The four attention projection weights of layer `i`.
    pub fn attention_weights(i: usize) -> [String; 4] {
        ["q", "k", "v", "o"].map(|p| layer(i, &format!("attn.{p}.weight")))
    }

    pub fn lora_a(target: &str) -> String {
        format!("{LORA_PREFIX}{target}.a")
    }

    pub fn lora_b(target: &str) -> String {
        format!("{LORA_PREFIX}{target}.b")
    }
}

/// Named tensors in sorted-name order.
pub type ParamStore<T> = BTreeMap<String, Tensor<T>>;

/// Backbone weights plus optional LoRA adapters and stage-2 projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub lora: Option<LoraConfig>,
}

/// The stage-2 adapter: `ē = e · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Projection<T> {
    /// Identity plus `normal(0, noise)` on the weight, zero bias.
    pub fn near_identity(dim: usize, noise: f64, rng: &mut SplitMix64) -> Self {
        let mut weight = Tensor::eye(dim);
        for w in weight.data_mut() {
            *w += T::lit(rng.normal() * noise);
        }
        Self {
            weight,
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Tensor::eye(dim),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.numel()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    /// Projects each row of `rows` (`[n × d]`).
    pub fn apply(&self, rows: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = rows.dims2()?;
        if d != self.dim() {
            return Err(CoreError::Dimension {
                what: "projection input",
                expected: self.dim(),
                got: d,
            });
        }
        let mut out = pcc_tensor::kernels::matmul(rows.data(), self.weight.data(), n, d, d);
        for row in out.chunks_mut(d) {
            for (x, &b) in row.iter_mut().zip(self.bias.data()) {
                *x += b;
            }
        }
        Ok(Tensor::new(vec![n, d], out)?)
    }
}

impl<T: Real> ModelBundle<T> {
    /// Fresh weights: `normal(0, 0.02)` matrices and embeddings, zero biases,
    /// unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let f = config.mlp_dim();
        let mut rng = SplitMix64::derive(seed, 0x6d6f_6465_6c);
        let mut params = ParamStore::new();
        let std = 0.02;
        params.insert(
            names::EMBED_BASE.into(),
            Tensor::randn(&[config.base_vocab(), d], std, &mut rng),
        );
        params.insert(
            names::EMBED_PROTEIN.into(),
            Tensor::randn(&[config.protein_vocab, d], std, &mut rng),
        );
        params.insert(
            names::POS_EMBED.into(),
            Tensor::randn(&[config.max_context, d], std, &mut rng),
        );
        for i in 0..config.n_layers {
            for ln in ["ln1", "ln2"] {
                params.insert(names::layer(i, &format!("{ln}.gain")), Tensor::filled(&[d], T::one()));
                params.insert(names::layer(i, &format!("{ln}.bias")), Tensor::zeros(&[d]));
            }
            for p in ["q", "k", "v", "o"] {
                params.insert(
                    names::layer(i, &format!("attn.{p}.weight")),
                    Tensor::randn(&[d, d], std, &mut rng),
                );
                params.insert(names::layer(i, &format!("attn.{p}.bias")), Tensor::zeros(&[d]));
            }
            params.insert(names::layer(i, "mlp.fc1.weight"), Tensor::randn(&[d, f], std, &mut rng));
            params.insert(names::layer(i, "mlp.fc1.bias"), Tensor::zeros(&[f]));
            params.insert(names::layer(i, "mlp.fc2.weight"), Tensor::randn(&[f, d], std, &mut rng));
            params.insert(names::layer(i, "mlp.fc2.bias"), Tensor::zeros(&[d]));
        }
        params.insert(names::LN_F_GAIN.into(), Tensor::filled(&[d], T::one()));
        params.insert(names::LN_F_BIAS.into(), Tensor::zeros(&[d]));
        Ok(Self {
            config,
            params,
            lora: None,
        })
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| CoreError::invalid(format!("missing parameter {name}")))
    }

    /// Token embedding row for `id`.
    pub fn token_row(&self, id: usize) -> Result<&[T]> {
        let base = self.config.base_vocab();
        if id >= self.config.vocab_size {
            return Err(CoreError::TokenOutOfRange {
                position: 0,
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(if id < base {
            self.param(names::EMBED_BASE)?.row(id)
        } else {
            self.param(names::EMBED_PROTEIN)?.row(id - base)
        })
    }

    pub fn projection(&self) -> Option<Projection<T>> {
        let weight = self.params.get(names::PROJ_WEIGHT)?.clone();
        let bias = self.params.get(names::PROJ_BIAS)?.clone();
        Some(Projection { weight, bias })
    }

    pub fn set_projection(&mut self, p: Projection<T>) {
        self.params.insert(names::PROJ_WEIGHT.into(), p.weight);
        self.params.insert(names::PROJ_BIAS.into(), p.bias);
    }

    /// Names of backbone tensors: everything except LoRA and projection.
    pub fn backbone_names(&self) -> Vec<String> {
        self.params
            .keys()
            .filter(|n| !n.starts_with(names::LORA_PREFIX) && !n.starts_with("projection."))
            .cloned()
            .collect()
    }

    pub fn parameter_count(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| filter(n))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            lora: self.lora.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }
}

impl ModelBundle<f32> {
    /// Per-tensor content hashes, keyed by name.
    pub fn tensor_hashes(&self) -> BTreeMap<String, Digest32> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), sha256_f32(v.data())))
            .collect()
    }
}
