use crate::dataset::EncodedRecord;
use crate::error::{CoreError, Result};
use crate::inference::query_plan;
use crate::model::{attention_summary, embed_plan_rows, forward_embeddings, ModelBundle, SegmentShare};
use crate::tokenizer::Vocabulary;

/// Last-layer attention over the three query segments (text before the
/// protein, the protein, text after it), averaged across `records`.
pub fn attention_report(
    bundle: &ModelBundle<f32>,
    vocab: &Vocabulary,
    records: &[EncodedRecord],
    threads: usize,
) -> Result<Vec<SegmentShare>> {
    if records.is_empty() {
        return Err(CoreError::invalid("attention report needs at least one record"));
    }
    let per = crate::parallel::map(records, threads, |rec| {
        let plan = query_plan(rec, vocab, bundle.config.max_context)?;
        let rows = embed_plan_rows(bundle, &plan, None, 0)?;
        let att = forward_embeddings(bundle, &rows, true)?
            .attention
            .ok_or_else(|| CoreError::invalid("attention was not captured"))?;
        let segs: Vec<_> = plan
            .segments
            .iter()
            .map(|s| (s.kind.label().to_string(), s.range.clone()))
            .collect();
        attention_summary(&att, &segs)
    });
    let n = records.len() as f64;
    let mut acc: Vec<SegmentShare> = Vec::new();
    for shares in per {
        let shares = shares?;
        if acc.is_empty() {
            acc = shares
                .iter()
                .map(|s| SegmentShare {
                    label: s.label.clone(),
                    avg_score: 0.0,
                    percentage: 0.0,
                })
                .collect();
        }
        if shares.len() != acc.len() {
            return Err(CoreError::invalid("records disagree on the segment layout"));
        }
        for (a, s) in acc.iter_mut().zip(shares) {
            a.avg_score += s.avg_score / n;
            a.percentage += s.percentage / n;
        }
    }
    Ok(acc)
}

/// Plain-text table: segment, averaged score, percentage.
pub fn format_attention_table(shares: &[SegmentShare]) -> String {
    let width = shares.iter().map(|s| s.label.len()).max().unwrap_or(0).max("segment".len());
    let mut out = format!("{:<width$}  {:>9}  {:>10}\n", "segment", "avg score", "percentage");
    for s in shares {
        out.push_str(&format!("{:<width$}  {:>9.4}  {:>9.2}%\n", s.label, s.avg_score, s.percentage));
    }
    out
}
