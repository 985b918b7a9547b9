use std::collections::HashSet;

use pcc_tensor::{Graph, SplitMix64, Tensor};

use super::config::TrainConfig;
use super::engine::{collect_grads, train_loop, LossCurve, StepCtx};
use crate::compression::{build_raw_bank, demo_plan, RawDemo};
use crate::dataset::EncodedRecord;
use crate::error::{CoreError, Result};
use crate::model::{names, LoraConfig, ModelBundle, Projection, TapeModel};
use crate::retrieval::{query_embedding, top_k_by_key};
use crate::tokenizer::{assemble_text_prompt, PromptPlan, Vocabulary};

/// Trained weights and the loss curve that produced them.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle<f32>,
    pub curve: LossCurve,
}

/// Start position for a prompt of `len` slots: uniform in
/// `0..=min(jitter, max_context - len)`.
pub fn jitter_offset(seed: u64, jitter: usize, len: usize, max_context: usize) -> usize {
    let room = max_context.saturating_sub(len).min(jitter);
    if room == 0 {
        return 0;
    }
    SplitMix64::new(seed).below(room as u64 + 1) as usize
}

fn example_seed(ctx: &StepCtx, index: usize) -> u64 {
    SplitMix64::derive(ctx.seed, index as u64).next_u64()
}

fn is_backbone(name: &str) -> bool {
    !name.starts_with(names::LORA_PREFIX) && !name.starts_with("projection.")
}

/// Trains every backbone tensor on text-only prompts (question, empty
/// protein span, question, answer). The toy backbone has no pretrained
/// weights, so this stands in for the language pretraining a real
/// backbone arrives with.
pub fn pretrain(
    records: &[EncodedRecord],
    vocab: &Vocabulary,
    base: &ModelBundle<f32>,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<TrainOutcome> {
    let mut bundle = base.clone();
    let max_context = bundle.config.max_context;
    let plans = records
        .iter()
        .map(|r| assemble_text_prompt(vocab, &r.question, &r.answer, max_context))
        .collect::<Result<Vec<_>>>()?;
    let curve = train_loop(&mut bundle, &is_backbone, plans.len(), cfg, threads, |b, train, i, ctx| {
        let plan = &plans[i];
        let offset = jitter_offset(example_seed(ctx, i), cfg.position_jitter, plan.len(), max_context);
        let mut g = Graph::new();
        let model = TapeModel::new(&mut g, b, is_backbone)?;
        let loss = model.answer_loss(&mut g, plan, None, offset)?;
        collect_grads(&mut g, &model, loss, train).map(Some)
    })?;
    Ok(TrainOutcome { bundle, curve })
}

/// Stage-1 trainables: LoRA adapters and the protein-token embedding rows.
pub fn stage1_trainable(name: &str) -> bool {
    name.starts_with(names::LORA_PREFIX) || name == names::EMBED_PROTEIN
}

/// Stage-2 trainables: the projection only.
pub fn stage2_trainable(name: &str) -> bool {
    name == names::PROJ_WEIGHT || name == names::PROJ_BIAS
}

/// LoRA fine-tuning on full joint-layout prompts. The returned bundle has
/// the adapters merged into the base weights.
pub fn train_stage1(
    records: &[EncodedRecord],
    vocab: &Vocabulary,
    base: &ModelBundle<f32>,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<TrainOutcome> {
    let lora = LoraConfig::attention(cfg.lora_rank, cfg.lora_alpha, base.config.n_layers);
    let mut bundle = base.attach_lora(&lora, cfg.seed)?;
    let max_context = bundle.config.max_context;
    let plans = records
        .iter()
        .map(|r| demo_plan(r, vocab, max_context))
        .collect::<Result<Vec<_>>>()?;
    let curve = if cfg.epochs == 0 || plans.is_empty() {
        LossCurve::default()
    } else {
        train_loop(&mut bundle, &stage1_trainable, plans.len(), cfg, threads, |b, train, i, ctx| {
            let plan = &plans[i];
            let offset = jitter_offset(example_seed(ctx, i), cfg.position_jitter, plan.len(), max_context);
            let mut g = Graph::new();
            let model = TapeModel::new(&mut g, b, stage1_trainable)?;
            let loss = model.answer_loss(&mut g, plan, None, offset)?;
            collect_grads(&mut g, &model, loss, train).map(Some)
        })?
    };
    Ok(TrainOutcome {
        bundle: bundle.merge_lora()?,
        curve,
    })
}

/// Dense-retrieval neighbours of each query among a set of raw demos,
/// most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub x: usize,
    pub lists: Vec<Vec<(usize, f64)>>,
}

impl Neighbors {
    /// Top-`k` demos per query by cosine similarity of the query embedding
    /// to each demo key. With `exclude_self`, a demo sharing the query's id
    /// is never its neighbour.
    pub fn dense(
        queries: &[EncodedRecord],
        demos: &[RawDemo],
        bundle: &ModelBundle<f32>,
        vocab: &Vocabulary,
        k: usize,
        exclude_self: bool,
        threads: usize,
    ) -> Result<Self> {
        let x = demos.first().map(|d| d.raw.rows()).unwrap_or(0);
        let pos: std::collections::HashMap<&str, usize> =
            demos.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        let lists = crate::parallel::map(queries, threads, |q| -> Result<Vec<(usize, f64)>> {
            if k == 0 {
                return Ok(Vec::new());
            }
            let emb = query_embedding(q, bundle, vocab)?;
            let exclude: HashSet<String> = if exclude_self {
                std::iter::once(q.id.clone()).collect()
            } else {
                HashSet::new()
            };
            let ranked = top_k_by_key(&emb, demos.iter().map(|d| (d.id.as_str(), d.key.as_slice())), k, &exclude)?;
            Ok(ranked.into_iter().map(|s| (pos[s.id.as_str()], s.score)).collect())
        });
        Ok(Self {
            x,
            lists: lists.into_iter().collect::<Result<Vec<_>>>()?,
        })
    }

    /// The plan with `n` demo slots in front and the raw demo rows that
    /// fill them, least similar first so the best match sits next to the
    /// query.
    pub fn icl_input(
        &self,
        query: usize,
        plan: &PromptPlan,
        demos: &[RawDemo],
        n: usize,
    ) -> Result<Option<(PromptPlan, Option<Tensor<f32>>)>> {
        if n == 0 {
            return Ok(Some((plan.clone(), None)));
        }
        let list = &self.lists[query];
        if list.len() < n {
            return Err(CoreError::NotEnoughCandidates {
                requested: n,
                available: list.len(),
            });
        }
        let d = demos[list[0].0].raw.last_dim();
        let mut data = Vec::with_capacity(n * self.x * d);
        for &(j, _) in list[..n].iter().rev() {
            data.extend_from_slice(demos[j].raw.data());
        }
        let raw = Tensor::new(vec![n * self.x, d], data)?;
        Ok(Some((icl_training_plan(plan, n, self.x), Some(raw))))
    }
}

/// `plan` with `n · x` compressed-demo slots in front.
pub fn icl_training_plan(plan: &PromptPlan, n: usize, x: usize) -> PromptPlan {
    plan.with_demo_prefix(n * x)
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    /// The stage-1 bundle plus the trained projection.
    pub bundle: ModelBundle<f32>,
    pub curve: LossCurve,
    /// Raw compressed training demos (projection independent).
    pub demos: Vec<RawDemo>,
    pub neighbors: Neighbors,
}

/// The bundle stage 2 starts from: `stage1` plus a near-identity
/// projection seeded from `cfg.seed`, unless it already has one.
pub fn stage2_start(stage1: &ModelBundle<f32>, cfg: &TrainConfig) -> ModelBundle<f32> {
    let mut bundle = stage1.clone();
    if bundle.projection().is_none() {
        let mut rng = SplitMix64::derive(cfg.seed, 0x7072_6f6a);
        bundle.set_projection(Projection::near_identity(bundle.config.hidden_dim, 0.01, &mut rng));
    }
    bundle
}

/// Trains only the projection. Each training query gets its `N` nearest
/// training demos (never itself) as compressed context; `N` is drawn per
/// batch from `cfg.n_values`. Raw demo states are computed once, and the
/// current projection is applied to them inside every step.
pub fn train_stage2(
    records: &[EncodedRecord],
    vocab: &Vocabulary,
    stage1: &ModelBundle<f32>,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<Stage2Outcome> {
    cfg.validate()?;
    let mut bundle = stage2_start(stage1, cfg);
    let built = build_raw_bank(records, stage1, vocab, cfg.x, threads);
    let demos = built.entries;
    let max_n = cfg.n_values.iter().copied().max().unwrap_or(0);
    let neighbors = Neighbors::dense(records, &demos, stage1, vocab, max_n, true, threads)?;
    let max_context = bundle.config.max_context;
    let plans = records
        .iter()
        .map(|r| demo_plan(r, vocab, max_context))
        .collect::<Result<Vec<_>>>()?;
    let curve = if cfg.epochs == 0 || plans.is_empty() {
        LossCurve::default()
    } else {
        train_loop(&mut bundle, &stage2_trainable, plans.len(), cfg, threads, |b, train, i, ctx| {
            let pick = SplitMix64::new(ctx.seed).below(cfg.n_values.len() as u64) as usize;
            let n = cfg.n_values[pick];
            let Some((plan, raw)) = neighbors.icl_input(i, &plans[i], &demos, n)? else {
                return Ok(None);
            };
            if plan.len() > max_context {
                return Ok(None);
            }
            let mut g = Graph::new();
            let model = TapeModel::new(&mut g, b, stage2_trainable)?;
            let vectors = match raw {
                Some(r) => {
                    let rv = g.constant(r);
                    Some(model.project(&mut g, rv)?)
                }
                None => None,
            };
            let loss = model.answer_loss(&mut g, &plan, vectors, 0)?;
            collect_grads(&mut g, &model, loss, train).map(Some)
        })?
    };
    Ok(Stage2Outcome {
        bundle,
        curve,
        demos,
        neighbors,
    })
}
