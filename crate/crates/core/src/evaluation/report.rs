use serde::{Deserialize, Serialize};

use super::budget::BudgetRow;
use super::lexicon::{extract_keywords, KeywordLexicon};
use super::metrics::{bleu, emji, rouge, RougeVariant};
use crate::error::Result;
use crate::model::SegmentShare;

/// Corpus-level means of every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub emji: f64,
    pub bleu2: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub empty_predictions: usize,
}

/// Scores `(prediction, reference)` pairs.
pub fn score_predictions(pairs: &[(String, String)], lexicon: &KeywordLexicon) -> Result<MetricSummary> {
    let preds: Vec<_> = pairs.iter().map(|(p, _)| extract_keywords(p, lexicon)).collect();
    let labels: Vec<_> = pairs.iter().map(|(_, r)| extract_keywords(r, lexicon)).collect();
    let e = emji(&preds, &labels)?;
    let n = pairs.len() as f64;
    let mut out = MetricSummary {
        count: pairs.len(),
        emji: e,
        bleu2: 0.0,
        rouge1: 0.0,
        rouge2: 0.0,
        rouge_l: 0.0,
        empty_predictions: 0,
    };
    for (p, r) in pairs {
        let b = bleu(p, r, 2)?;
        out.bleu2 += b.score / n;
        out.empty_predictions += b.empty_prediction as usize;
        out.rouge1 += rouge(p, r, RougeVariant::One) / n;
        out.rouge2 += rouge(p, r, RougeVariant::Two) / n;
        out.rouge_l += rouge(p, r, RougeVariant::L) / n;
    }
    Ok(out)
}

/// Everything `eval` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub strategy: String,
    pub n: usize,
    pub x: usize,
    pub metrics: MetricSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<SegmentShare>>,
    #[serde(default)]
    pub budget: Vec<BudgetRow>,
}
