//! The differentiable forward pass, recorded on a [`Graph`].

use std::collections::BTreeMap;

use pcc_tensor::{Graph, Real, Tensor, Var};

use super::bundle::{names, ModelBundle};
use super::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::tokenizer::{PromptPlan, Slot};

/// Graph handles for every tensor of a bundle.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::invalid(format!("parameter {name} is not bound")))
    }
}

/// Places every bundle tensor on `g`; those selected by `trainable` become
/// gradient-tracking leaves, the rest constants.
pub fn bind<T: Real>(g: &mut Graph<T>, bundle: &ModelBundle<T>, trainable: impl Fn(&str) -> bool) -> BoundParams {
    let vars = bundle
        .params
        .iter()
        .map(|(name, t)| (name.clone(), g.leaf(t.clone(), trainable(name))))
        .collect();
    BoundParams { vars }
}

/// A bundle bound onto one graph, ready to record forward passes.
pub struct TapeModel<'a, T> {
    pub bundle: &'a ModelBundle<T>,
    pub params: BoundParams,
    table: Var,
}

impl<'a, T: Real> TapeModel<'a, T> {
    pub fn new(g: &mut Graph<T>, bundle: &'a ModelBundle<T>, trainable: impl Fn(&str) -> bool) -> Result<Self> {
        let params = bind(g, bundle, trainable);
        let table = g.concat_rows(&[params.var(names::EMBED_BASE)?, params.var(names::EMBED_PROTEIN)?])?;
        Ok(Self { bundle, params, table })
    }

    fn config(&self) -> &ModelConfig {
        &self.bundle.config
    }

    /// The full `[vocab × d]` token table (the tied output head).
    pub fn table(&self) -> Var {
        self.table
    }

    /// Input rows for `plan` starting at position `offset`. `vectors`
    /// supplies rows for `Slot::Vector` positions.
    pub fn embed_plan(&self, g: &mut Graph<T>, plan: &PromptPlan, vectors: Option<Var>, offset: usize) -> Result<Var> {
        let cfg = self.config();
        let t = plan.len();
        if t == 0 {
            return Err(CoreError::invalid("cannot embed an empty prompt"));
        }
        if offset + t > cfg.max_context {
            return Err(CoreError::ContextOverflow {
                len: offset + t,
                max: cfg.max_context,
            });
        }
        for (position, s) in plan.slots.iter().enumerate() {
            let ids: &[usize] = match s {
                Slot::Token(id) => std::slice::from_ref(id),
                Slot::Fused { seq, structure } => &[*seq, *structure],
                Slot::Vector(_) => &[],
            };
            if let Some(&id) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
                return Err(CoreError::TokenOutOfRange {
                    position,
                    id,
                    vocab: cfg.vocab_size,
                });
            }
        }
        let mut parts = Vec::new();
        let mut i = 0;
        while i < t {
            let mut j = i;
            match plan.slots[i] {
                Slot::Token(_) => {
                    let mut ids = Vec::new();
                    while let Some(Slot::Token(id)) = plan.slots.get(j) {
                        ids.push(*id);
                        j += 1;
                    }
                    parts.push(g.gather_rows(self.table, &ids)?);
                }
                Slot::Fused { .. } => {
                    let (mut seqs, mut structs) = (Vec::new(), Vec::new());
                    while let Some(Slot::Fused { seq, structure }) = plan.slots.get(j) {
                        seqs.push(*seq);
                        structs.push(*structure);
                        j += 1;
                    }
                    let a = g.gather_rows(self.table, &seqs)?;
                    let b = g.gather_rows(self.table, &structs)?;
                    parts.push(g.add(a, b)?);
                }
                Slot::Vector(first) => {
                    let v = vectors.ok_or_else(|| CoreError::invalid("plan has vector slots but no vectors"))?;
                    let mut last = first;
                    j += 1;
                    while let Some(Slot::Vector(k)) = plan.slots.get(j) {
                        if *k != last + 1 {
                            break;
                        }
                        last = *k;
                        j += 1;
                    }
                    parts.push(g.slice_rows(v, first, last + 1)?);
                }
            }
            i = j;
        }
        let rows = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        let pos_ids: Vec<usize> = (offset..offset + t).collect();
        let pos = g.gather_rows(self.params.var(names::POS_EMBED)?, &pos_ids)?;
        Ok(g.add(rows, pos)?)
    }

    /// `x · W + b`, plus the scaled LoRA path when an adapter is attached.
    fn linear(&self, g: &mut Graph<T>, x: Var, weight: &str, bias: &str) -> Result<Var> {
        let w = self.params.var(weight)?;
        let b = self.params.var(bias)?;
        let xw = g.matmul(x, w)?;
        let mut y = g.add_row(xw, b)?;
        if let Some((_, _, s)) = self.bundle.lora_for(weight) {
            let a = self.params.var(&names::lora_a(weight))?;
            let bm = self.params.var(&names::lora_b(weight))?;
            let xa = g.matmul_bt(x, a)?;
            let xab = g.matmul_bt(xa, bm)?;
            let scaled = g.scale(xab, T::lit(s));
            y = g.add(y, scaled)?;
        }
        Ok(y)
    }

    fn layer_norm(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.params.var(&format!("{prefix}.gain"))?;
        let bias = self.params.var(&format!("{prefix}.bias"))?;
        Ok(g.layer_norm(x, gain, bias, T::lit(self.config().ln_eps))?)
    }

    /// Final-layer hidden states (after the closing layer norm) for
    /// positioned input rows `x`.
    pub fn hidden(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let cfg = self.config();
        let (t, d) = g.value(x).dims2()?;
        if d != cfg.hidden_dim {
            return Err(CoreError::Dimension {
                what: "input embedding width",
                expected: cfg.hidden_dim,
                got: d,
            });
        }
        if t > cfg.max_context {
            return Err(CoreError::ContextOverflow {
                len: t,
                max: cfg.max_context,
            });
        }
        let mut x = x;
        for l in 0..cfg.n_layers {
            let p = |s: &str| names::layer(l, s);
            let h = self.layer_norm(g, x, &p("ln1"))?;
            let q = self.linear(g, h, &p("attn.q.weight"), &p("attn.q.bias"))?;
            let k = self.linear(g, h, &p("attn.k.weight"), &p("attn.k.bias"))?;
            let v = self.linear(g, h, &p("attn.v.weight"), &p("attn.v.bias"))?;
            let a = g.attention(q, k, v, cfg.n_heads)?;
            let o = self.linear(g, a, &p("attn.o.weight"), &p("attn.o.bias"))?;
            x = g.add(x, o)?;
            let h2 = self.layer_norm(g, x, &p("ln2"))?;
            let f1 = self.linear(g, h2, &p("mlp.fc1.weight"), &p("mlp.fc1.bias"))?;
            let act = g.gelu(f1);
            let f2 = self.linear(g, act, &p("mlp.fc2.weight"), &p("mlp.fc2.bias"))?;
            x = g.add(x, f2)?;
        }
        self.layer_norm(g, x, "ln_f")
    }

    /// Logits `hidden · tableᵀ`.
    pub fn logits(&self, g: &mut Graph<T>, hidden: Var) -> Result<Var> {
        Ok(g.matmul_bt(hidden, self.table)?)
    }

    /// Projects `rows` with the bundle's stage-2 projection.
    pub fn project(&self, g: &mut Graph<T>, rows: Var) -> Result<Var> {
        let w = self.params.var(names::PROJ_WEIGHT)?;
        let b = self.params.var(names::PROJ_BIAS)?;
        let y = g.matmul(rows, w)?;
        Ok(g.add_row(y, b)?)
    }

    /// Mean next-token cross-entropy over the plan's answer positions.
    /// Logits are computed only on the rows that are supervised.
    pub fn answer_loss(&self, g: &mut Graph<T>, plan: &PromptPlan, vectors: Option<Var>, offset: usize) -> Result<Var> {
        let mask = crate::training::answer_mask(plan)?;
        let targets_all = plan.next_token_targets();
        let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let targets: Vec<usize> = rows.iter().map(|&i| targets_all[i]).collect();
        let x = self.embed_plan(g, plan, vectors, offset)?;
        let h = self.hidden(g, x)?;
        let picked = g.gather_rows(h, &rows)?;
        let logits = self.logits(g, picked)?;
        let all = vec![true; rows.len()];
        Ok(g.cross_entropy_masked(logits, &targets, &all)?)
    }

    /// Current value of a bound tensor.
    pub fn value<'g>(&self, g: &'g Graph<T>, name: &str) -> Result<&'g Tensor<T>> {
        Ok(g.value(self.params.var(name)?))
    }
}
