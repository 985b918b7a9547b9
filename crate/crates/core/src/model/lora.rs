use pcc_tensor::{Real, SplitMix64, Tensor};
use serde::{Deserialize, Serialize};

use super::bundle::{names, ModelBundle};
use crate::error::{CoreError, Result};

/// Which weights get adapters and how large they are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<String>,
}

impl LoraConfig {
    /// Adapters on every Q, K, V and O projection.
    pub fn attention(rank: usize, alpha: f64, n_layers: usize) -> Self {
        Self {
            rank,
            alpha,
            targets: (0..n_layers).flat_map(names::attention_weights).collect(),
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Low-rank update `(alpha / rank) · B · A` for one `[in × out]` weight.
/// `a` is `[rank × in]`, `b` is `[out × rank]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    pub target: String,
    pub rank: usize,
    pub alpha: f64,
    pub a: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> LoraAdapter<T> {
    /// `A ~ normal(0, 0.02)`, `B = 0`, so the adapter starts inert.
    pub fn init(target: &str, input: usize, output: usize, rank: usize, alpha: f64, rng: &mut SplitMix64) -> Self {
        Self {
            target: target.to_string(),
            rank,
            alpha,
            a: Tensor::randn(&[rank, input], 0.02, rng),
            b: Tensor::zeros(&[output, rank]),
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// The dense `[in × out]` update this adapter adds to its target.
    pub fn delta(&self) -> Vec<T> {
        let input = self.a.shape()[1];
        let output = self.b.shape()[0];
        let s = T::lit(self.scaling());
        let mut out = vec![T::zero(); input * output];
        for k in 0..input {
            for j in 0..output {
                let mut acc = T::zero();
                for r in 0..self.rank {
                    acc += self.b.data()[j * self.rank + r] * self.a.data()[r * input + k];
                }
                out[k * output + j] = s * acc;
            }
        }
        out
    }

    fn check(&self, weight: &Tensor<T>) -> Result<()> {
        let (input, output) = weight.dims2()?;
        let expect_a = [self.rank, input];
        let expect_b = [output, self.rank];
        if self.a.shape() != expect_a || self.b.shape() != expect_b {
            return Err(CoreError::invalid(format!(
                "adapter for {} has A {:?} and B {:?}; weight is {:?}",
                self.target,
                self.a.shape(),
                self.b.shape(),
                weight.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoraMode {
    /// Keep base weights and store the adapters as extra parameters.
    Attach,
    /// Fold each update into its base weight and drop the adapters.
    Merge,
}

/// Returns a copy of `bundle` with `adapters` attached or merged.
pub fn apply_lora<T: Real>(
    bundle: &ModelBundle<T>,
    adapters: &[LoraAdapter<T>],
    mode: LoraMode,
) -> Result<ModelBundle<T>> {
    let mut out = bundle.clone();
    for ad in adapters {
        let weight = out.param(&ad.target)?;
        ad.check(weight)?;
    }
    match mode {
        LoraMode::Attach => {
            let (rank, alpha) = match adapters.first() {
                Some(a) => (a.rank, a.alpha),
                None => return Ok(out),
            };
            if adapters.iter().any(|a| a.rank != rank || a.alpha != alpha) {
                return Err(CoreError::invalid("adapters must share rank and alpha"));
            }
            for ad in adapters {
                out.params.insert(names::lora_a(&ad.target), ad.a.clone());
                out.params.insert(names::lora_b(&ad.target), ad.b.clone());
            }
            let mut targets: Vec<String> = out.lora.take().map(|c| c.targets).unwrap_or_default();
            for ad in adapters {
                if !targets.contains(&ad.target) {
                    targets.push(ad.target.clone());
                }
            }
            out.lora = Some(LoraConfig { rank, alpha, targets });
        }
        LoraMode::Merge => {
            for ad in adapters {
                let delta = ad.delta();
                let w = out.params.get_mut(&ad.target).expect("checked above");
                for (x, d) in w.data_mut().iter_mut().zip(delta) {
                    *x += d;
                }
            }
        }
    }
    Ok(out)
}

impl<T: Real> ModelBundle<T> {
    /// Attaches fresh inert adapters described by `config`.
    pub fn attach_lora(&self, config: &LoraConfig, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::derive(seed, 0x6c6f_7261);
        let mut adapters = Vec::with_capacity(config.targets.len());
        for target in &config.targets {
            let (input, output) = self.param(target)?.dims2()?;
            adapters.push(LoraAdapter::init(target, input, output, config.rank, config.alpha, &mut rng));
        }
        apply_lora(self, &adapters, LoraMode::Attach)
    }

    /// The adapters currently stored in the bundle.
    pub fn adapters(&self) -> Result<Vec<LoraAdapter<T>>> {
        let Some(cfg) = &self.lora else {
            return Ok(Vec::new());
        };
        cfg.targets
            .iter()
            .map(|t| {
                Ok(LoraAdapter {
                    target: t.clone(),
                    rank: cfg.rank,
                    alpha: cfg.alpha,
                    a: self.param(&names::lora_a(t))?.clone(),
                    b: self.param(&names::lora_b(t))?.clone(),
                })
            })
            .collect()
    }

    /// Folds stored adapters into their base weights and removes them.
    pub fn merge_lora(&self) -> Result<Self> {
        let adapters = self.adapters()?;
        let mut out = apply_lora(self, &adapters, LoraMode::Merge)?;
        out.params.retain(|k, _| !k.starts_with(names::LORA_PREFIX));
        out.lora = None;
        Ok(out)
    }

    /// The adapter for `target`, if one is attached: `(A, B, scaling)`.
    pub(crate) fn lora_for(&self, target: &str) -> Option<(&Tensor<T>, &Tensor<T>, f64)> {
        let cfg = self.lora.as_ref()?;
        if !cfg.targets.iter().any(|t| t == target) {
            return None;
        }
        let a = self.params.get(&names::lora_a(target))?;
        let b = self.params.get(&names::lora_b(target))?;
        Some((a, b, cfg.scaling()))
    }
}
