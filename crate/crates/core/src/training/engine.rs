//! The shared optimization loop.
//!
//! Each example is differentiated on its own graph; per-example gradients
//! are summed in batch order and averaged, which equals padding the batch
//! and masking pads out of loss and attention, without the padding. Because
//! the sum order is fixed, results do not depend on the worker count.

use std::io::Write;
use std::path::Path;

use pcc_tensor::{clip_global_norm, AdamW, Graph, SplitMix64, Var};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{CoreError, Result};
use crate::model::{ModelBundle, TapeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub steps: Vec<StepLoss>,
    /// Mean training loss of each epoch.
    pub epoch_means: Vec<f64>,
    /// Examples skipped (for example by overflowing the context).
    pub skipped: usize,
}

/// Writes `step,loss` rows.
pub fn write_loss_csv(curve: &LossCurve, path: &Path) -> Result<()> {
    let mut out = String::from("step,epoch,loss\n");
    for s in &curve.steps {
        out.push_str(&format!("{},{},{}\n", s.step, s.epoch, s.loss));
    }
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| CoreError::io(path, e))
}

/// Per-step context handed to the example closure.
pub(crate) struct StepCtx {
    pub seed: u64,
}

/// Loss value and gradients (aligned with the trainable names) for one
/// example, or `None` when the example is skipped.
pub(crate) type ExampleGrad = Option<(f64, Vec<Vec<f32>>)>;

/// Runs backward on `loss` and collects the gradients of `names`.
pub(crate) fn collect_grads(
    g: &mut Graph<f32>,
    model: &TapeModel<'_, f32>,
    loss: Var,
    names: &[String],
) -> Result<(f64, Vec<Vec<f32>>)> {
    let value = g.value(loss).data()[0] as f64;
    g.backward(loss)?;
    let grads = names
        .iter()
        .map(|n| {
            let v = model.params.var(n)?;
            Ok(match g.grad(v) {
                Some(gr) => gr.to_vec(),
                None => vec![0.0; g.value(v).numel()],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, grads))
}

/// Optimizes the `trainable` tensors of `bundle` over `n_examples`
/// examples for `cfg.epochs` epochs. `example` differentiates one example
/// (by index) against the current bundle.
pub(crate) fn train_loop<F>(
    bundle: &mut ModelBundle<f32>,
    trainable: &(dyn Fn(&str) -> bool + Sync),
    n_examples: usize,
    cfg: &TrainConfig,
    threads: usize,
    example: F,
) -> Result<LossCurve>
where
    F: Fn(&ModelBundle<f32>, &[String], usize, &StepCtx) -> Result<ExampleGrad> + Sync,
{
    cfg.validate()?;
    let names: Vec<String> = bundle.params.keys().filter(|n| trainable(n)).cloned().collect();
    if names.is_empty() {
        return Err(CoreError::invalid("nothing to train"));
    }
    let mut opt = AdamW::<f32>::new(cfg.optimizer());
    let mut curve = LossCurve::default();
    let mut step = 0usize;
    let mut seen = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_examples).collect();
        SplitMix64::derive(cfg.seed, 0x0e00_0000 + epoch as u64).shuffle(&mut order);
        let (mut epoch_sum, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let ctx = StepCtx {
                seed: SplitMix64::derive(cfg.seed, 0x5700_0000_0000 + step as u64).next_u64(),
            };
            let frozen: &ModelBundle<f32> = bundle;
            let results = crate::parallel::map(batch, threads, |&i| example(frozen, &names, i, &ctx));
            let mut sum: Option<Vec<Vec<f32>>> = None;
            let (mut loss_sum, mut used) = (0.0, 0usize);
            for r in results {
                seen += 1;
                let Some((loss, grads)) = r? else {
                    curve.skipped += 1;
                    continue;
                };
                if !loss.is_finite() {
                    return Err(CoreError::Divergence { step, loss });
                }
                loss_sum += loss;
                used += 1;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let Some(mut grads) = sum else {
                continue;
            };
            let inv = 1.0 / used as f32;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(CoreError::Divergence {
                    step,
                    loss: f64::NAN,
                });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            let mut params: Vec<_> = bundle
                .params
                .iter_mut()
                .filter(|(n, _)| trainable(n))
                .map(|(_, t)| t)
                .collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            opt.step(&mut params, &grad_refs)?;
            let mean = loss_sum / used as f64;
            curve.steps.push(StepLoss { step, epoch, loss: mean });
            epoch_sum += loss_sum;
            epoch_count += used;
            step += 1;
        }
        if epoch_count > 0 {
            curve.epoch_means.push(epoch_sum / epoch_count as f64);
        }
    }
    if seen > 0 && curve.skipped * 10 > seen {
        return Err(CoreError::TooManySkipped {
            skipped: curve.skipped,
            total: seen,
        });
    }
    Ok(curve)
}
