use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use pcc_tensor::SplitMix64;
use serde::{Deserialize, Serialize};

use super::lexicon::KeywordLexicon;
use super::report::{score_predictions, MetricSummary};
use crate::compression::DemoBank;
use crate::dataset::{EncodedRecord, QaRecord};
use crate::error::{CoreError, Result};
use crate::inference::{infer_batch, select_demos, DemoSource, InferenceRecord};
use crate::model::ModelBundle;
use crate::retrieval::{Bm25Index, Strategy};
use crate::tokenizer::Vocabulary;

/// Everything a sweep holds fixed across cells.
pub struct SweepSetup<'a> {
    pub queries: &'a [QaRecord],
    /// The records the banks were built from, for the retrieval top-1 baseline.
    pub demos: &'a [QaRecord],
    pub vocab: &'a Vocabulary,
    pub bundle: &'a ModelBundle<f32>,
    pub lexicon: &'a KeywordLexicon,
    pub strategy: Strategy,
    pub bm25: Option<&'a Bm25Index>,
    pub seed: u64,
    pub max_new_tokens: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub x: usize,
    pub n: usize,
    pub metrics: MetricSummary,
    /// EMJI of answering with the top-ranked demonstration's answer verbatim.
    pub retrieval_top1_emji: f64,
}

/// Scores inference output against the reference answers, matched by id.
pub fn score_records(records: &[InferenceRecord], refs: &[QaRecord], lexicon: &KeywordLexicon) -> Result<MetricSummary> {
    let by_id: HashMap<&str, &QaRecord> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    let pairs = records
        .iter()
        .map(|o| {
            let r = by_id
                .get(o.id.as_str())
                .ok_or_else(|| CoreError::invalid(format!("no reference answer for {}", o.id)))?;
            Ok((o.answer.clone(), r.answer.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    score_predictions(&pairs, lexicon)
}

fn retrieval_top1(setup: &SweepSetup<'_>, source: &DemoSource<'_>) -> Result<f64> {
    let answers: HashMap<&str, &str> = setup.demos.iter().map(|r| (r.id.as_str(), r.answer.as_str())).collect();
    let idx: Vec<usize> = (0..setup.queries.len()).collect();
    let picks = crate::parallel::map(&idx, setup.threads, |&i| {
        let raw = &setup.queries[i];
        let enc = EncodedRecord::encode(raw, setup.vocab)?;
        let seed = SplitMix64::derive(setup.seed, i as u64).next_u64();
        let top = select_demos(setup.strategy, &enc, raw, source, setup.bundle, setup.vocab, 1, seed, &HashSet::new())?;
        let id = &top[0].id;
        let answer = answers
            .get(id.as_str())
            .ok_or_else(|| CoreError::invalid(format!("demonstration {id} is not among the sweep demos")))?;
        Ok((answer.to_string(), raw.answer.clone()))
    });
    let pairs = picks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(score_predictions(&pairs, setup.lexicon)?.emji)
}

/// One cell per `(bank, n)` pair, rows ordered by bank then `n`. Each
/// bank fixes `x`.
pub fn sweep(setup: &SweepSetup<'_>, banks: &[&DemoBank], n_values: &[usize]) -> Result<Vec<SweepCell>> {
    if banks.is_empty() || n_values.is_empty() {
        return Err(CoreError::invalid("sweep needs at least one bank and one shot count"));
    }
    let mut cells = Vec::with_capacity(banks.len() * n_values.len());
    for bank in banks {
        let source = DemoSource { bank, bm25: setup.bm25 };
        let top1 = retrieval_top1(setup, &source)?;
        for &n in n_values {
            let out = infer_batch(
                setup.queries,
                setup.vocab,
                setup.bundle,
                Some(&source),
                setup.strategy,
                n,
                setup.seed,
                setup.max_new_tokens,
                setup.threads,
            )?;
            cells.push(SweepCell {
                x: bank.x,
                n,
                metrics: score_records(&out, setup.queries, setup.lexicon)?,
                retrieval_top1_emji: top1,
            });
        }
    }
    Ok(cells)
}

pub const SWEEP_CSV_HEADER: &str = "x,n,emji,bleu2,rouge1,rouge2,rouge_l,retrieval_top1_emji";

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for c in cells {
        let m = &c.metrics;
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            c.x, c.n, m.emji, m.bleu2, m.rouge1, m.rouge2, m.rouge_l, c.retrieval_top1_emji
        ));
    }
    s
}

pub fn write_sweep_csv(cells: &[SweepCell], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(sweep_csv(cells).as_bytes()).map_err(|e| CoreError::io(path, e))
}
