//! Answer cross-entropy without a tape, for monitoring and evaluation.

use pcc_tensor::Tensor;

use super::mask::answer_mask;
use super::stages::Neighbors;
use crate::compression::{demo_plan, RawDemo};
use crate::dataset::EncodedRecord;
use crate::error::{CoreError, Result};
use crate::model::{embed_plan_rows, ModelBundle, Session};
use crate::tokenizer::{PromptPlan, Vocabulary};

/// Mean next-token cross-entropy over the answer positions of `plan`.
pub fn eval_answer_loss(
    bundle: &ModelBundle<f32>,
    plan: &PromptPlan,
    vectors: Option<&Tensor<f32>>,
    offset: usize,
) -> Result<f64> {
    let mask = answer_mask(plan)?;
    let targets = plan.next_token_targets();
    let rows = embed_plan_rows(bundle, plan, vectors, offset)?;
    let mut s = Session::new(bundle, false)?;
    let hidden = s.feed(&rows)?;
    let picked: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let d = bundle.config.hidden_dim;
    let mut sel = Vec::with_capacity(picked.len() * d);
    for &i in &picked {
        sel.extend_from_slice(hidden.row(i));
    }
    let logits = s.logits(&Tensor::new(vec![picked.len(), d], sel)?)?;
    let mut total = 0.0;
    for (r, &i) in picked.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        total += lse - row[targets[i]] as f64;
    }
    Ok(total / picked.len() as f64)
}

/// Mean answer loss of full joint-layout prompts (no demonstrations).
pub fn mean_answer_loss(
    bundle: &ModelBundle<f32>,
    vocab: &Vocabulary,
    records: &[EncodedRecord],
    threads: usize,
) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::invalid("no records to evaluate"));
    }
    let losses = crate::parallel::map(records, threads, |r| {
        let plan = demo_plan(r, vocab, bundle.config.max_context)?;
        eval_answer_loss(bundle, &plan, None, 0)
    });
    let losses = losses.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean answer loss of `queries` with `n` compressed demonstrations in
/// front, projected by the bundle's current projection. Queries whose
/// prompt would overflow are left out.
pub fn stage2_eval_loss(
    bundle: &ModelBundle<f32>,
    vocab: &Vocabulary,
    queries: &[EncodedRecord],
    demos: &[RawDemo],
    neighbors: &Neighbors,
    n: usize,
    threads: usize,
) -> Result<f64> {
    let projection = bundle
        .projection()
        .ok_or_else(|| CoreError::invalid("bundle has no projection layer"))?;
    let idx: Vec<usize> = (0..queries.len()).collect();
    let losses = crate::parallel::map(&idx, threads, |&q| -> Result<Option<f64>> {
        let plan = demo_plan(&queries[q], vocab, bundle.config.max_context)?;
        let Some((plan, raw)) = neighbors.icl_input(q, &plan, demos, n)? else {
            return Ok(None);
        };
        if plan.len() > bundle.config.max_context {
            return Ok(None);
        }
        let vectors = match raw {
            Some(r) => Some(projection.apply(&r)?),
            None => None,
        };
        eval_answer_loss(bundle, &plan, vectors.as_ref(), 0).map(Some)
    });
    let kept: Vec<f64> = losses.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(CoreError::invalid("every query overflowed the context"));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}
