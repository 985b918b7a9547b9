//! Greedy decoding over zero-shot and compressed N-shot prompts.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use pcc_tensor::{SplitMix64, Tensor};
use serde::{Deserialize, Serialize};

use crate::compression::{concat_demos, CompressedDemo, DemoBank};
use crate::dataset::{EncodedRecord, QaRecord};
use crate::error::{CoreError, Result};
use crate::model::{embed_plan_rows, names, ModelBundle, Session};
use crate::retrieval::{bm25_rank, query_embedding, random_select, retrieve_top_k, Bm25Index, Scored, Strategy};
use crate::tokenizer::{assemble_prompt, specials, Layout, PromptPlan, Vocabulary};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 64;

/// Appends the argmax token (lowest id on ties) until `eos`,
/// `max_new_tokens`, or the end of the context window. `context` holds positioned input rows. The returned
/// ids exclude `eos`.
pub fn generate_greedy(
    bundle: &ModelBundle<f32>,
    context: &Tensor<f32>,
    max_new_tokens: usize,
    eos: usize,
) -> Result<Vec<usize>> {
    if max_new_tokens == 0 {
        return Ok(Vec::new());
    }
    let cfg = &bundle.config;
    let t = if context.numel() == 0 { 0 } else { context.rows() };
    if t == 0 {
        return Err(CoreError::invalid("generation needs a non-empty context"));
    }
    if t + 1 > cfg.max_context {
        return Err(CoreError::ContextOverflow {
            len: t + 1,
            max: cfg.max_context,
        });
    }
    let mut s = Session::new(bundle, false)?;
    let hidden = s.feed(context)?;
    let mut last = hidden.slice_rows(t - 1, t);
    let pos = bundle.param(names::POS_EMBED)?;
    let mut out = Vec::new();
    loop {
        let logits = s.logits(&last)?;
        let next = argmax(logits.data());
        if next == eos || s.len() == cfg.max_context {
            break;
        }
        out.push(next);
        if out.len() == max_new_tokens {
            break;
        }
        let row: Vec<f32> = bundle
            .token_row(next)?
            .iter()
            .zip(pos.row(s.len()))
            .map(|(&a, &p)| a + p)
            .collect();
        last = s.feed(&Tensor::new(vec![1, cfg.hidden_dim], row)?)?;
    }
    Ok(out)
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// The query's joint-layout prompt, ending at `<SEP>`.
pub fn query_plan(rec: &EncodedRecord, vocab: &Vocabulary, max_context: usize) -> Result<PromptPlan> {
    assemble_prompt(vocab, &rec.question, &rec.t_s, &rec.t_x, Layout::Joint, None, max_context)
}

/// What was selected and how much context it cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Selected demonstrations in ranking order (best first). The prompt
    /// holds them in reverse, so the best sits next to the query.
    pub selected: Vec<Scored>,
    pub prompt_tokens: usize,
    pub generated_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IclOutput {
    pub answer: String,
    pub tokens: Vec<usize>,
    pub trace: Trace,
}

/// Where demonstrations come from.
pub struct DemoSource<'a> {
    pub bank: &'a DemoBank,
    pub bm25: Option<&'a Bm25Index>,
}

/// Picks `n` demonstrations for a query.
#[allow(clippy::too_many_arguments)]
pub fn select_demos(
    strategy: Strategy,
    query: &EncodedRecord,
    raw: &QaRecord,
    source: &DemoSource<'_>,
    bundle: &ModelBundle<f32>,
    vocab: &Vocabulary,
    n: usize,
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<Vec<Scored>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    match strategy {
        Strategy::Dense => {
            let emb = query_embedding(query, bundle, vocab)?;
            retrieve_top_k(&emb, source.bank, n, exclude)
        }
        Strategy::Bm25 => {
            let idx = source
                .bm25
                .ok_or_else(|| CoreError::invalid("bm25 strategy needs a BM25 index"))?;
            bm25_rank(idx, &raw.question, &raw.sequence, n, exclude)
        }
        Strategy::Random => {
            let ids: Vec<String> = source.bank.entries.iter().map(|e| e.id.clone()).collect();
            Ok(random_select(&ids, n, seed, exclude)?
                .into_iter()
                .map(|id| Scored { id, score: 0.0 })
                .collect())
        }
    }
}

/// Decodes an answer for `query` with `n` compressed demonstrations.
/// `n = 0` is the zero-shot path and needs no source.
#[allow(clippy::too_many_arguments)]
pub fn run_icl_inference(
    query: &EncodedRecord,
    raw: &QaRecord,
    source: Option<&DemoSource<'_>>,
    strategy: Strategy,
    n: usize,
    bundle: &ModelBundle<f32>,
    vocab: &Vocabulary,
    seed: u64,
    max_new_tokens: usize,
) -> Result<IclOutput> {
    let base = query_plan(query, vocab, bundle.config.max_context)?;
    let (plan, vectors, selected) = if n == 0 {
        (base, None, Vec::new())
    } else {
        let source = source.ok_or_else(|| CoreError::invalid("n > 0 needs a demonstration bank"))?;
        if source.bank.is_empty() {
            return Err(CoreError::invalid("demonstration bank is empty"));
        }
        let selected = select_demos(strategy, query, raw, source, bundle, vocab, n, seed, &HashSet::new())?;
        let demos: Vec<&CompressedDemo> = selected
            .iter()
            .rev()
            .map(|s| {
                source
                    .bank
                    .get(&s.id)
                    .ok_or_else(|| CoreError::invalid(format!("demonstration {} is not in the bank", s.id)))
            })
            .collect::<Result<_>>()?;
        let d = concat_demos(&demos)?;
        (base.with_demo_prefix(d.rows()), Some(d), selected)
    };
    if plan.len() > bundle.config.max_context {
        return Err(CoreError::ContextOverflow {
            len: plan.len(),
            max: bundle.config.max_context,
        });
    }
    let rows = embed_plan_rows(bundle, &plan, vectors.as_ref(), 0)?;
    let tokens = generate_greedy(bundle, &rows, max_new_tokens, vocab.special(specials::EOS))?;
    Ok(IclOutput {
        answer: vocab.decode(&tokens),
        trace: Trace {
            selected,
            prompt_tokens: plan.len(),
            generated_tokens: tokens.len(),
        },
        tokens,
    })
}

/// One line of batch inference output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub id: String,
    pub strategy: Strategy,
    #[serde(rename = "N")]
    pub n: usize,
    pub x: usize,
    pub selected_demos: Vec<String>,
    pub answer: String,
    pub prompt_tokens: usize,
    pub generated_tokens: usize,
}

/// Runs [`run_icl_inference`] over `queries`. Per-query random seeds are
/// derived from `seed` and the query position.
#[allow(clippy::too_many_arguments)]
pub fn infer_batch(
    queries: &[QaRecord],
    vocab: &Vocabulary,
    bundle: &ModelBundle<f32>,
    source: Option<&DemoSource<'_>>,
    strategy: Strategy,
    n: usize,
    seed: u64,
    max_new_tokens: usize,
    threads: usize,
) -> Result<Vec<InferenceRecord>> {
    let idx: Vec<usize> = (0..queries.len()).collect();
    let x = source.map(|s| s.bank.x).unwrap_or(0);
    let out = crate::parallel::map(&idx, threads, |&i| {
        let raw = &queries[i];
        let enc = EncodedRecord::encode(raw, vocab)?;
        let qseed = SplitMix64::derive(seed, i as u64).next_u64();
        let o = run_icl_inference(&enc, raw, source, strategy, n, bundle, vocab, qseed, max_new_tokens)?;
        Ok(InferenceRecord {
            id: raw.id.clone(),
            strategy,
            n,
            x: if n == 0 { 0 } else { x },
            selected_demos: o.trace.selected.iter().map(|s| s.id.clone()).collect(),
            answer: o.answer,
            prompt_tokens: o.trace.prompt_tokens,
            generated_tokens: o.trace.generated_tokens,
        })
    });
    out.into_iter().collect()
}

pub fn write_inference_jsonl(records: &[InferenceRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(&out).map_err(|e| CoreError::io(path, e))
}

pub fn read_inference_jsonl(path: &Path) -> Result<Vec<InferenceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CoreError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
