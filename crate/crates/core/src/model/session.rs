//! The inference forward pass: no tape, one position at a time, with a
//! key/value cache. It calls the same kernels in the same order as the
//! tape path, so both produce bitwise-identical hidden states.

use pcc_tensor::kernels;
use pcc_tensor::{Real, Tensor};

use super::attention::AttentionRecord;
use super::bundle::{names, ModelBundle};
use crate::error::{CoreError, Result};
use crate::tokenizer::{PromptPlan, Slot};

struct Linear<'a, T> {
    w: &'a [T],
    b: &'a [T],
    input: usize,
    output: usize,
    lora: Option<(&'a [T], &'a [T], usize, T)>,
}

impl<'a, T: Real> Linear<'a, T> {
    fn resolve(bundle: &'a ModelBundle<T>, weight: &str, bias: &str) -> Result<Self> {
        let wt = bundle.param(weight)?;
        let (input, output) = wt.dims2()?;
        let lora = bundle
            .lora_for(weight)
            .map(|(a, b, s)| (a.data(), b.data(), a.shape()[0], T::lit(s)));
        Ok(Self {
            w: wt.data(),
            b: bundle.param(bias)?.data(),
            input,
            output,
            lora,
        })
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = kernels::matmul(x, self.w, 1, self.input, self.output);
        for (v, &b) in y.iter_mut().zip(self.b) {
            *v += b;
        }
        if let Some((a, bm, r, s)) = self.lora {
            let xa = kernels::matmul_bt(x, a, 1, self.input, r);
            let xab = kernels::matmul_bt(&xa, bm, 1, r, self.output);
            for (v, u) in y.iter_mut().zip(xab) {
                *v += u * s;
            }
        }
        y
    }
}

struct LayerRefs<'a, T> {
    ln1: (&'a [T], &'a [T]),
    ln2: (&'a [T], &'a [T]),
    q: Linear<'a, T>,
    k: Linear<'a, T>,
    v: Linear<'a, T>,
    o: Linear<'a, T>,
    fc1: Linear<'a, T>,
    fc2: Linear<'a, T>,
}

/// An incremental forward pass over one growing sequence.
pub struct Session<'a, T> {
    bundle: &'a ModelBundle<T>,
    layers: Vec<LayerRefs<'a, T>>,
    ln_f: (&'a [T], &'a [T]),
    table: Vec<T>,
    k_cache: Vec<Vec<T>>,
    v_cache: Vec<Vec<T>>,
    attention: Option<Vec<Vec<f64>>>,
    len: usize,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(bundle: &'a ModelBundle<T>, capture_attention: bool) -> Result<Self> {
        let cfg = &bundle.config;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| names::layer(l, s);
            let lin = |n: &str| Linear::resolve(bundle, &p(&format!("{n}.weight")), &p(&format!("{n}.bias")));
            let ln = |n: &str| -> Result<(&[T], &[T])> {
                Ok((
                    bundle.param(&p(&format!("{n}.gain")))?.data(),
                    bundle.param(&p(&format!("{n}.bias")))?.data(),
                ))
            };
            layers.push(LayerRefs {
                ln1: ln("ln1")?,
                ln2: ln("ln2")?,
                q: lin("attn.q")?,
                k: lin("attn.k")?,
                v: lin("attn.v")?,
                o: lin("attn.o")?,
                fc1: lin("mlp.fc1")?,
                fc2: lin("mlp.fc2")?,
            });
        }
        let mut table = bundle.param(names::EMBED_BASE)?.data().to_vec();
        table.extend_from_slice(bundle.param(names::EMBED_PROTEIN)?.data());
        Ok(Self {
            bundle,
            layers,
            ln_f: (
                bundle.param(names::LN_F_GAIN)?.data(),
                bundle.param(names::LN_F_BIAS)?.data(),
            ),
            table,
            k_cache: vec![Vec::new(); cfg.n_layers],
            v_cache: vec![Vec::new(); cfg.n_layers],
            attention: capture_attention.then(|| vec![Vec::new(); cfg.n_layers]),
            len: 0,
        })
    }

    /// Positions consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Runs positioned input rows `[n × d]` and returns their final hidden
    /// states `[n × d]`.
    pub fn feed(&mut self, rows: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = &self.bundle.config;
        let d = cfg.hidden_dim;
        let (n, w) = if rows.numel() == 0 { (0, d) } else { rows.dims2()? };
        if w != d {
            return Err(CoreError::Dimension {
                what: "input embedding width",
                expected: d,
                got: w,
            });
        }
        if self.len + n > cfg.max_context {
            return Err(CoreError::ContextOverflow {
                len: self.len + n,
                max: cfg.max_context,
            });
        }
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let h = self.step(rows.row(r));
            out.extend(h);
        }
        Ok(Tensor::new(vec![n, d], out)?)
    }

    fn step(&mut self, input: &[T]) -> Vec<T> {
        let cfg = &self.bundle.config;
        let d = cfg.hidden_dim;
        let heads = cfg.n_heads;
        let eps = T::lit(cfg.ln_eps);
        let i = self.len;
        let mut x = input.to_vec();
        let mut h = vec![T::zero(); d];
        for (l, layer) in self.layers.iter().enumerate() {
            kernels::layer_norm_row(&x, layer.ln1.0, layer.ln1.1, eps, &mut h);
            let q = layer.q.apply(&h);
            self.k_cache[l].extend(layer.k.apply(&h));
            self.v_cache[l].extend(layer.v.apply(&h));
            let mut a = vec![T::zero(); d];
            let mut probs = vec![T::zero(); heads * (i + 1)];
            kernels::attention_row(&q, &self.k_cache[l], &self.v_cache[l], i, d, heads, &mut a, &mut probs);
            if let Some(rec) = self.attention.as_mut() {
                rec[l].extend(probs.iter().map(|p| p.as_f64()));
            }
            let o = layer.o.apply(&a);
            for (xv, ov) in x.iter_mut().zip(o) {
                *xv = *xv + ov;
            }
            kernels::layer_norm_row(&x, layer.ln2.0, layer.ln2.1, eps, &mut h);
            let f: Vec<T> = layer.fc1.apply(&h).into_iter().map(kernels::gelu).collect();
            let f2 = layer.fc2.apply(&f);
            for (xv, fv) in x.iter_mut().zip(f2) {
                *xv = *xv + fv;
            }
        }
        let mut hidden = vec![T::zero(); d];
        kernels::layer_norm_row(&x, self.ln_f.0, self.ln_f.1, eps, &mut hidden);
        self.len += 1;
        hidden
    }

    /// Logits for hidden rows `[n × d]`.
    pub fn logits(&self, hidden: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.bundle.config.hidden_dim;
        let v = self.bundle.config.vocab_size;
        let n = if hidden.numel() == 0 { 0 } else { hidden.dims2()?.0 };
        Ok(Tensor::new(vec![n, v], kernels::matmul_bt(hidden.data(), &self.table, n, d, v))?)
    }

    /// Attention captured so far, if capture was requested.
    pub fn attention(&self) -> Option<AttentionRecord> {
        self.attention.as_ref().map(|layers| AttentionRecord {
            len: self.len,
            heads: self.bundle.config.n_heads,
            layers: layers.clone(),
        })
    }
}

/// Token rows plus position rows: `table[ids[t]] + pos[t]`.
pub fn embed_tokens<T: Real>(bundle: &ModelBundle<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let slots: Vec<Slot> = ids.iter().map(|&id| Slot::Token(id)).collect();
    embed_slots(bundle, &slots, None, 0)
}

/// Positioned input rows for a prompt plan.
pub fn embed_plan_rows<T: Real>(
    bundle: &ModelBundle<T>,
    plan: &PromptPlan,
    vectors: Option<&Tensor<T>>,
    offset: usize,
) -> Result<Tensor<T>> {
    embed_slots(bundle, &plan.slots, vectors, offset)
}

fn embed_slots<T: Real>(
    bundle: &ModelBundle<T>,
    slots: &[Slot],
    vectors: Option<&Tensor<T>>,
    offset: usize,
) -> Result<Tensor<T>> {
    let cfg = &bundle.config;
    let d = cfg.hidden_dim;
    if offset + slots.len() > cfg.max_context {
        return Err(CoreError::ContextOverflow {
            len: offset + slots.len(),
            max: cfg.max_context,
        });
    }
    let pos = bundle.param(names::POS_EMBED)?;
    let token = |position: usize, id: usize| {
        bundle.token_row(id).map_err(|_| CoreError::TokenOutOfRange {
            position,
            id,
            vocab: cfg.vocab_size,
        })
    };
    let mut out = Vec::with_capacity(slots.len() * d);
    for (t, slot) in slots.iter().enumerate() {
        let row: Vec<T> = match *slot {
            Slot::Token(id) => token(t, id)?.to_vec(),
            Slot::Fused { seq, structure } => {
                let a = token(t, seq)?;
                let b = token(t, structure)?;
                a.iter().zip(b).map(|(&x, &y)| x + y).collect()
            }
            Slot::Vector(k) => {
                let v = vectors.ok_or_else(|| CoreError::invalid("plan has vector slots but no vectors"))?;
                if k >= v.rows() || v.last_dim() != d {
                    return Err(CoreError::Dimension {
                        what: "demonstration vectors",
                        expected: k + 1,
                        got: v.rows(),
                    });
                }
                v.row(k).to_vec()
            }
        };
        out.extend(row.iter().zip(pos.row(offset + t)).map(|(&x, &p)| x + p));
    }
    Ok(Tensor::new(vec![slots.len(), d], out)?)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub hidden: Tensor<T>,
    pub logits: Tensor<T>,
    pub attention: Option<AttentionRecord>,
}

/// Hidden states, logits and optionally attention for positioned rows.
pub fn forward_embeddings<T: Real>(
    bundle: &ModelBundle<T>,
    embs: &Tensor<T>,
    capture_attention: bool,
) -> Result<ForwardOutput<T>> {
    let mut s = Session::new(bundle, capture_attention)?;
    let hidden = s.feed(embs)?;
    let logits = s.logits(&hidden)?;
    Ok(ForwardOutput {
        hidden,
        logits,
        attention: s.attention(),
    })
}

/// [`forward_embeddings`] over token ids, embedding inside the call.
pub fn forward_tokens<T: Real>(bundle: &ModelBundle<T>, ids: &[usize], capture_attention: bool) -> Result<ForwardOutput<T>> {
    let cfg = &bundle.config;
    if ids.len() > cfg.max_context {
        return Err(CoreError::ContextOverflow {
            len: ids.len(),
            max: cfg.max_context,
        });
    }
    let mut s = Session::new(bundle, capture_attention)?;
    let pos = bundle.param(names::POS_EMBED)?;
    let d = cfg.hidden_dim;
    let mut hidden = Vec::with_capacity(ids.len() * d);
    for (t, &id) in ids.iter().enumerate() {
        let tok = bundle.token_row(id).map_err(|_| CoreError::TokenOutOfRange {
            position: t,
            id,
            vocab: cfg.vocab_size,
        })?;
        let row: Vec<T> = tok.iter().zip(pos.row(t)).map(|(&x, &p)| x + p).collect();
        hidden.extend(s.step(&row));
    }
    let hidden = Tensor::new(vec![ids.len(), d], hidden)?;
    let logits = s.logits(&hidden)?;
    Ok(ForwardOutput {
        hidden,
        logits,
        attention: s.attention(),
    })
}

/// Final hidden states only.
pub fn hidden_states<T: Real>(bundle: &ModelBundle<T>, embs: &Tensor<T>) -> Result<Tensor<T>> {
    Session::new(bundle, false)?.feed(embs)
}
