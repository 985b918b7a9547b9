use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Lowercased tokens split on whitespace and ASCII punctuation.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard index; two empty sets score 1.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean per-instance Jaccard between predicted and label keyword sets.
pub fn emji(pred_sets: &[BTreeSet<String>], label_sets: &[BTreeSet<String>]) -> Result<f64> {
    if pred_sets.len() != label_sets.len() {
        return Err(CoreError::invalid(format!(
            "{} prediction sets but {} label sets",
            pred_sets.len(),
            label_sets.len()
        )));
    }
    if pred_sets.is_empty() {
        return Err(CoreError::invalid("no instances to score"));
    }
    let total: f64 = pred_sets.iter().zip(label_sets).map(|(p, l)| jaccard(p, l)).sum();
    Ok(total / pred_sets.len() as f64)
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn clipped_overlap(pred: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    pred.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    /// Set when the prediction had no tokens (the score is then 0).
    pub empty_prediction: bool,
}

/// Sentence BLEU with uniform weights over `1..=max_n` and the standard
/// brevity penalty. No smoothing: any zero precision gives 0.
pub fn bleu(pred: &str, reference: &str, max_n: usize) -> Result<BleuScore> {
    if max_n == 0 {
        return Err(CoreError::invalid("BLEU needs max_n >= 1"));
    }
    let p = metric_tokens(pred);
    let r = metric_tokens(reference);
    if p.is_empty() {
        return Ok(BleuScore {
            score: 0.0,
            empty_prediction: true,
        });
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let pc = ngram_counts(&p, n);
        let total: usize = pc.values().sum();
        let overlap = clipped_overlap(&pc, &ngram_counts(&r, n));
        if overlap == 0 || total == 0 {
            return Ok(BleuScore {
                score: 0.0,
                empty_prediction: false,
            });
        }
        log_sum += (overlap as f64 / total as f64).ln();
    }
    let (c, rl) = (p.len() as f64, r.len() as f64);
    let bp = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    Ok(BleuScore {
        score: bp * (log_sum / max_n as f64).exp(),
        empty_prediction: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

fn f1(overlap: usize, n_pred: usize, n_ref: usize) -> f64 {
    if overlap == 0 || n_pred == 0 || n_ref == 0 {
        return 0.0;
    }
    let p = overlap as f64 / n_pred as f64;
    let r = overlap as f64 / n_ref as f64;
    2.0 * p * r / (p + r)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE F1. Two empty texts score 1; one empty text scores 0. When
/// neither text is long enough to hold an n-gram of the requested order,
/// the score is 1 for equal token sequences and 0 otherwise.
pub fn rouge(pred: &str, reference: &str, variant: RougeVariant) -> f64 {
    let p = metric_tokens(pred);
    let r = metric_tokens(reference);
    if p.is_empty() && r.is_empty() {
        return 1.0;
    }
    match variant {
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let pc = ngram_counts(&p, n);
            let rc = ngram_counts(&r, n);
            if pc.is_empty() && rc.is_empty() {
                return if p == r { 1.0 } else { 0.0 };
            }
            let overlap = clipped_overlap(&pc, &rc);
            f1(overlap, pc.values().sum(), rc.values().sum())
        }
        RougeVariant::L => f1(lcs(&p, &r), p.len(), r.len()),
    }
}
