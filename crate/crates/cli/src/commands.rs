use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pcc_core::compression::{build_demo_bank, demo_plan, DemoBank};
use pcc_core::dataset::{encode_records, generate_dataset, text_corpus, EncodedRecord, QaRecord, Splits, LEXICON_FILE};
use pcc_core::evaluation::{
    attention_report, budget_report, format_attention_table, score_records, solve_query_length, sweep, sweep_csv,
    write_sweep_csv, BudgetRow, EvalReport, KeywordLexicon, SweepSetup,
};
use pcc_core::inference::{
    infer_batch, query_plan, read_inference_jsonl, select_demos, write_inference_jsonl, DemoSource,
    DEFAULT_MAX_NEW_TOKENS,
};
use pcc_core::model::{load_checkpoint, save_checkpoint, ModelBundle};
use pcc_core::retrieval::{Bm25Index, Scored, Strategy};
use pcc_core::tensor::SplitMix64;
use pcc_core::tokenizer::{Vocabulary, CODEBOOK_SIZE};
use pcc_core::training::{
    mean_answer_loss, pretrain, stage2_eval_loss, stage2_start, train_stage1, train_stage2, write_loss_csv, Neighbors,
    TrainConfig,
};
use serde::Serialize;

use crate::config::FileConfig;
use crate::{Cli, Command, SelectArgs, StrategyArg};

const DEFAULT_SPLIT: &str = "test";
const DEFAULT_X_VALUES: [usize; 5] = [1, 2, 4, 8, 16];
const DEFAULT_N_VALUES: [usize; 6] = [0, 1, 2, 4, 8, 16];

/// Resolved global settings: flags, then the config file, then defaults.
struct Ctx {
    file: FileConfig,
    seed: u64,
    threads: usize,
    data: PathBuf,
    vocab: Option<PathBuf>,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let g = &cli.global;
        let file = FileConfig::load(g.config.as_deref())?;
        let threads = g.threads.or(file.threads).unwrap_or(1);
        ensure!(threads >= 1, "--threads must be at least 1");
        Ok(Self {
            seed: g.seed.or(file.seed).unwrap_or(0),
            threads,
            data: g.data.clone().or_else(|| file.data.clone()).unwrap_or_else(|| "data".into()),
            vocab: g.vocab.clone().or_else(|| file.vocab.clone()),
            file,
        })
    }

    fn splits(&self) -> Result<Splits> {
        Splits::load(&self.data).with_context(|| format!("loading dataset from {}", self.data.display()))
    }

    fn lexicon(&self) -> Result<KeywordLexicon> {
        Ok(KeywordLexicon::load(&self.data.join(LEXICON_FILE))?)
    }

    /// The vocabulary file when one exists, else a fresh build from the
    /// training split (deterministic, so both agree).
    fn vocab(&self, splits: &Splits) -> Result<Vocabulary> {
        let path = self.vocab.clone().unwrap_or_else(|| self.data.join("vocab.json"));
        if path.exists() {
            return Ok(Vocabulary::load(&path)?);
        }
        if self.vocab.is_some() {
            bail!("vocabulary {} does not exist", path.display());
        }
        Ok(build_vocab(&splits.train))
    }

    fn x(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.x).unwrap_or(TrainConfig::toy(2).x)
    }

    fn n(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.n).unwrap_or(TrainConfig::toy(2).n_values[0])
    }

    fn split(&self, flag: &Option<String>) -> String {
        flag.clone()
            .or_else(|| self.file.split.clone())
            .unwrap_or_else(|| DEFAULT_SPLIT.into())
    }

    fn strategy(&self, flag: Option<StrategyArg>) -> Result<Strategy> {
        match (flag, &self.file.strategy) {
            (Some(s), _) => Ok(s.into()),
            (None, Some(s)) => Ok(s.parse()?),
            (None, None) => Ok(Strategy::Dense),
        }
    }

    fn max_new_tokens(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.max_new_tokens).unwrap_or(DEFAULT_MAX_NEW_TOKENS)
    }

    fn init_model(&self, vocab: &Vocabulary) -> Result<ModelBundle<f32>> {
        let cfg = self.file.model_config(vocab.len(), vocab.protein_count())?;
        Ok(ModelBundle::init(cfg, self.seed)?)
    }

    fn max_context(&self, vocab: &Vocabulary) -> Result<usize> {
        Ok(self.file.model_config(vocab.len(), vocab.protein_count())?.max_context)
    }
}

fn build_vocab(train: &[QaRecord]) -> Vocabulary {
    Vocabulary::build(&text_corpus(train), 1, CODEBOOK_SIZE)
}

fn or_default(path: &Option<PathBuf>, default: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| default.into())
}

fn load_model(path: &Path, vocab: &Vocabulary) -> Result<ModelBundle<f32>> {
    let b = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    ensure!(
        b.config.vocab_size == vocab.len(),
        "checkpoint {} has vocabulary size {} but the vocabulary has {} tokens",
        path.display(),
        b.config.vocab_size,
        vocab.len()
    );
    Ok(b)
}

fn load_bank(path: &Path) -> Result<DemoBank> {
    DemoBank::load(path).with_context(|| format!("loading demo bank {}", path.display()))
}

fn save_model(bundle: &ModelBundle<f32>, path: &Path) -> Result<()> {
    save_checkpoint(bundle, path).with_context(|| format!("writing {}", path.display()))
}

fn loss_csv_path(out: &Path) -> PathBuf {
    out.with_extension("loss.csv")
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn bm25_for(strategy: Strategy, train: &[QaRecord]) -> Result<Option<Bm25Index>> {
    Ok(if strategy == Strategy::Bm25 {
        Some(Bm25Index::from_records(train)?)
    } else {
        None
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli)?;
    match &cli.command {
        Command::GenData { out } => gen_data(&ctx, out),
        Command::BuildVocab { out } => {
            let splits = ctx.splits()?;
            let out = out.clone().unwrap_or_else(|| ctx.data.join("vocab.json"));
            let vocab = build_vocab(&splits.train);
            vocab.save(&out)?;
            println!("vocabulary: {} tokens ({} protein) -> {}", vocab.len(), vocab.protein_count(), out.display());
            Ok(())
        }
        Command::Pretrain { out } => {
            let splits = ctx.splits()?;
            let vocab = ctx.vocab(&splits)?;
            let out = or_default(out, "pretrain.ckpt");
            let bundle = run_pretrain(&ctx, &vocab, &splits, Some(&out))?;
            save_model(&bundle, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::TrainStage1 { checkpoint, out } => train_stage1_cmd(&ctx, checkpoint, out),
        Command::TrainStage2 { checkpoint, x, n, out } => train_stage2_cmd(&ctx, checkpoint, *x, *n, out),
        Command::BuildBank { checkpoint, x, out } => build_bank_cmd(&ctx, checkpoint, *x, out),
        Command::Retrieve {
            checkpoint,
            bank,
            select,
            out,
        } => retrieve_cmd(&ctx, checkpoint, bank, select, out),
        Command::Infer {
            checkpoint,
            bank,
            select,
            max_new_tokens,
            out,
        } => infer_cmd(&ctx, checkpoint, bank, select, *max_new_tokens, out),
        Command::Eval {
            predictions,
            split,
            checkpoint,
            out,
        } => eval_cmd(&ctx, predictions, split, checkpoint, out),
        Command::Sweep {
            checkpoint,
            x_values,
            n_values,
            split,
            strategy,
            max_new_tokens,
            out,
        } => sweep_cmd(&ctx, checkpoint, x_values, n_values, split, *strategy, *max_new_tokens, out),
        Command::Budget {
            x,
            n,
            demo_len,
            query_len,
            target_ratio,
            split,
            out,
        } => budget_cmd(&ctx, *x, *n, *demo_len, *query_len, *target_ratio, split, out),
        Command::AttentionReport { checkpoint, split, out } => attention_cmd(&ctx, checkpoint, split, out),
    }
}

fn gen_data(ctx: &Ctx, out: &Option<PathBuf>) -> Result<()> {
    let out = out.clone().unwrap_or_else(|| ctx.data.clone());
    let task = generate_dataset(&ctx.file.dataset_spec(ctx.seed)?)?;
    task.save(&out)?;
    let s = &task.splits;
    println!(
        "wrote {}: train {}, val {}, test {}, test_ood {}; class purity {:.4}",
        out.display(),
        s.train.len(),
        s.val.len(),
        s.test.len(),
        s.test_ood.len(),
        task.class_purity()
    );
    Ok(())
}

fn run_pretrain(ctx: &Ctx, vocab: &Vocabulary, splits: &Splits, out: Option<&Path>) -> Result<ModelBundle<f32>> {
    let train = encode_records(&splits.train, vocab)?;
    let base = ctx.init_model(vocab)?;
    let outcome = pretrain(&train, vocab, &base, &ctx.file.train_config(0, ctx.seed)?, ctx.threads)?;
    println!("pretrain epoch losses {:?}", outcome.curve.epoch_means);
    if let Some(out) = out {
        write_loss_csv(&outcome.curve, &loss_csv_path(out))?;
    }
    Ok(outcome.bundle)
}

fn train_stage1_cmd(ctx: &Ctx, checkpoint: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let out = or_default(out, "stage1.ckpt");
    let base = match checkpoint {
        Some(p) => load_model(p, &vocab)?,
        None => run_pretrain(ctx, &vocab, &splits, None)?,
    };
    let train = encode_records(&splits.train, &vocab)?;
    let val = encode_records(&splits.val, &vocab)?;
    let before = mean_answer_loss(&base, &vocab, &val, ctx.threads)?;
    let outcome = train_stage1(&train, &vocab, &base, &ctx.file.train_config(1, ctx.seed)?, ctx.threads)?;
    let after = mean_answer_loss(&outcome.bundle, &vocab, &val, ctx.threads)?;
    save_model(&outcome.bundle, &out)?;
    write_loss_csv(&outcome.curve, &loss_csv_path(&out))?;
    println!("stage 1: val answer loss {before:.4} -> {after:.4}; wrote {}", out.display());
    Ok(())
}

fn train_stage2_cmd(
    ctx: &Ctx,
    checkpoint: &Option<PathBuf>,
    x: Option<usize>,
    n: Option<usize>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let stage1 = load_model(&or_default(checkpoint, "stage1.ckpt"), &vocab)?;
    let out = or_default(out, "stage2.ckpt");
    let mut cfg = ctx.file.train_config(2, ctx.seed)?;
    if let Some(x) = x.or(ctx.file.x) {
        cfg.x = x;
    }
    if let Some(n) = n.or(ctx.file.n) {
        cfg.n_values = vec![n];
    }
    cfg.validate()?;
    let train = encode_records(&splits.train, &vocab)?;
    let val = encode_records(&splits.val, &vocab)?;
    let outcome = train_stage2(&train, &vocab, &stage1, &cfg, ctx.threads)?;
    let n_eval = cfg.n_values.iter().copied().max().unwrap_or(0);
    let nb = Neighbors::dense(&val, &outcome.demos, &stage1, &vocab, n_eval, true, ctx.threads)?;
    let start = stage2_start(&stage1, &cfg);
    let before = stage2_eval_loss(&start, &vocab, &val, &outcome.demos, &nb, n_eval, ctx.threads)?;
    let after = stage2_eval_loss(&outcome.bundle, &vocab, &val, &outcome.demos, &nb, n_eval, ctx.threads)?;
    save_model(&outcome.bundle, &out)?;
    write_loss_csv(&outcome.curve, &loss_csv_path(&out))?;
    println!(
        "stage 2 (x {}, N {n_eval}): val answer loss {before:.4} -> {after:.4}; wrote {}",
        cfg.x,
        out.display()
    );
    Ok(())
}

fn build_bank_cmd(ctx: &Ctx, checkpoint: &Option<PathBuf>, x: Option<usize>, out: &Option<PathBuf>) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let bundle = load_model(&or_default(checkpoint, "stage2.ckpt"), &vocab)?;
    let out = or_default(out, "bank.bin");
    let x = ctx.x(x);
    let train = encode_records(&splits.train, &vocab)?;
    let (bank, skipped) = build_demo_bank(&train, &bundle, &vocab, x, ctx.threads)?;
    for (id, why) in &skipped {
        eprintln!("skipped {id}: {why}");
    }
    bank.save(&out)?;
    println!("bank: {} demonstrations, x {x}, {} skipped; wrote {}", bank.len(), skipped.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct RetrievalLine<'a> {
    id: &'a str,
    strategy: Strategy,
    #[serde(rename = "N")]
    n: usize,
    selected: Vec<Scored>,
}

fn retrieve_cmd(
    ctx: &Ctx,
    checkpoint: &Option<PathBuf>,
    bank: &Option<PathBuf>,
    select: &SelectArgs,
    out: &Option<PathBuf>,
) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let bundle = load_model(&or_default(checkpoint, "stage2.ckpt"), &vocab)?;
    let bank = load_bank(&or_default(bank, "bank.bin"))?;
    let strategy = ctx.strategy(select.strategy)?;
    let n = ctx.n(select.n);
    let queries = splits.by_name(&ctx.split(&select.split))?;
    let bm25 = bm25_for(strategy, &splits.train)?;
    let source = DemoSource {
        bank: &bank,
        bm25: bm25.as_ref(),
    };
    let mut text = String::new();
    for (i, raw) in queries.iter().enumerate() {
        let enc = EncodedRecord::encode(raw, &vocab)?;
        let seed = SplitMix64::derive(ctx.seed, i as u64).next_u64();
        let selected = select_demos(strategy, &enc, raw, &source, &bundle, &vocab, n, seed, &HashSet::new())?;
        text += &serde_json::to_string(&RetrievalLine {
            id: &raw.id,
            strategy,
            n,
            selected,
        })?;
        text.push('\n');
    }
    let out = or_default(out, "retrieval.jsonl");
    std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("{} queries, {strategy} N {n}; wrote {}", queries.len(), out.display());
    Ok(())
}

fn infer_cmd(
    ctx: &Ctx,
    checkpoint: &Option<PathBuf>,
    bank: &Option<PathBuf>,
    select: &SelectArgs,
    max_new_tokens: Option<usize>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let bundle = load_model(&or_default(checkpoint, "stage2.ckpt"), &vocab)?;
    let strategy = ctx.strategy(select.strategy)?;
    let n = ctx.n(select.n);
    let split = ctx.split(&select.split);
    let queries = splits.by_name(&split)?;
    let bank = if n > 0 {
        Some(load_bank(&or_default(bank, "bank.bin"))?)
    } else {
        None
    };
    let bm25 = bm25_for(strategy, &splits.train)?;
    let source = bank.as_ref().map(|bank| DemoSource {
        bank,
        bm25: bm25.as_ref(),
    });
    let records = infer_batch(
        queries,
        &vocab,
        &bundle,
        source.as_ref(),
        strategy,
        n,
        ctx.seed,
        ctx.max_new_tokens(max_new_tokens),
        ctx.threads,
    )?;
    let out = or_default(out, "inference.jsonl");
    write_inference_jsonl(&records, &out)?;
    println!("{split}: {} answers, {strategy} N {n}; wrote {}", records.len(), out.display());
    Ok(())
}

/// Mean uncompressed demonstration length and mean query length of the
/// given records.
fn mean_lengths(
    demo_ids: &[&str],
    queries: &[&QaRecord],
    train: &[QaRecord],
    vocab: &Vocabulary,
    max_context: usize,
) -> Result<(f64, f64)> {
    let by_id: HashMap<&str, &QaRecord> = train.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut demo_total = 0usize;
    for id in demo_ids {
        let rec = by_id.get(id).with_context(|| format!("demonstration {id} is not in the training split"))?;
        demo_total += demo_plan(&EncodedRecord::encode(rec, vocab)?, vocab, max_context)?.len();
    }
    let mut query_total = 0usize;
    for q in queries {
        query_total += query_plan(&EncodedRecord::encode(q, vocab)?, vocab, max_context)?.len();
    }
    let mean = |t: usize, n: usize| if n == 0 { 0.0 } else { t as f64 / n as f64 };
    Ok((mean(demo_total, demo_ids.len()), mean(query_total, queries.len())))
}

fn eval_cmd(
    ctx: &Ctx,
    predictions: &Option<PathBuf>,
    split: &Option<String>,
    checkpoint: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let lexicon = ctx.lexicon()?;
    let split = ctx.split(split);
    let refs = splits.by_name(&split)?;
    let preds = read_inference_jsonl(&or_default(predictions, "inference.jsonl"))?;
    let first = preds.first().context("no predictions to evaluate")?;
    let metrics = score_records(&preds, refs, &lexicon)?;
    let (n, x) = (first.n, first.x);
    let max_context = ctx.max_context(&vocab)?;
    let budget = if n > 0 {
        let by_id: HashMap<&str, &QaRecord> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
        let queries: Vec<&QaRecord> = preds.iter().filter_map(|p| by_id.get(p.id.as_str()).copied()).collect();
        let demo_ids: Vec<&str> = preds.iter().flat_map(|p| p.selected_demos.iter().map(String::as_str)).collect();
        let (demo_len, query_len) = mean_lengths(&demo_ids, &queries, &splits.train, &vocab, max_context)?;
        vec![budget_report(&vec![demo_len; n], query_len, x)?]
    } else {
        Vec::new()
    };
    let attention = match checkpoint {
        Some(p) => {
            let bundle = load_model(p, &vocab)?;
            Some(attention_report(&bundle, &vocab, &encode_records(refs, &vocab)?, ctx.threads)?)
        }
        None => None,
    };
    let report = EvalReport {
        split: split.clone(),
        strategy: first.strategy.to_string(),
        n,
        x,
        metrics,
        attention,
        budget,
    };
    let out = or_default(out, "report.json");
    write_json(&report, &out)?;
    let m = &report.metrics;
    println!(
        "{split} {} N {n}: EMJI {:.4} BLEU-2 {:.4} ROUGE-1 {:.4} ROUGE-2 {:.4} ROUGE-L {:.4} ({} answers); wrote {}",
        report.strategy,
        m.emji,
        m.bleu2,
        m.rouge1,
        m.rouge2,
        m.rouge_l,
        m.count,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    ctx: &Ctx,
    checkpoint: &Option<PathBuf>,
    x_values: &Option<Vec<usize>>,
    n_values: &Option<Vec<usize>>,
    split: &Option<String>,
    strategy: Option<StrategyArg>,
    max_new_tokens: Option<usize>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let lexicon = ctx.lexicon()?;
    let bundle = load_model(&or_default(checkpoint, "stage2.ckpt"), &vocab)?;
    let x_values = x_values.clone().or_else(|| ctx.file.x_values.clone()).unwrap_or(DEFAULT_X_VALUES.to_vec());
    let n_values = n_values.clone().or_else(|| ctx.file.n_values.clone()).unwrap_or(DEFAULT_N_VALUES.to_vec());
    let strategy = ctx.strategy(strategy)?;
    let split = split.clone().or_else(|| ctx.file.split.clone()).unwrap_or_else(|| "val".into());
    let queries = splits.by_name(&split)?;
    let train = encode_records(&splits.train, &vocab)?;
    let banks = x_values
        .iter()
        .map(|&x| Ok(build_demo_bank(&train, &bundle, &vocab, x, ctx.threads)?.0))
        .collect::<Result<Vec<_>>>()?;
    let bank_refs: Vec<&DemoBank> = banks.iter().collect();
    let bm25 = bm25_for(strategy, &splits.train)?;
    let setup = SweepSetup {
        queries,
        demos: &splits.train,
        vocab: &vocab,
        bundle: &bundle,
        lexicon: &lexicon,
        strategy,
        bm25: bm25.as_ref(),
        seed: ctx.seed,
        max_new_tokens: ctx.max_new_tokens(max_new_tokens),
        threads: ctx.threads,
    };
    let cells = sweep(&setup, &bank_refs, &n_values)?;
    let out = or_default(out, "sweep.csv");
    write_sweep_csv(&cells, &out)?;
    print!("{}", sweep_csv(&cells));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn budget_cmd(
    ctx: &Ctx,
    x: Option<usize>,
    n: Option<usize>,
    demo_len: Option<f64>,
    query_len: Option<f64>,
    target_ratio: Option<f64>,
    split: &Option<String>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let x = x.or(ctx.file.x).unwrap_or(16);
    let n_values: Vec<usize> = match n {
        Some(n) => vec![n],
        None => DEFAULT_X_VALUES.to_vec(),
    };
    let measured = if demo_len.is_none() || (query_len.is_none() && target_ratio.is_none()) {
        let splits = ctx.splits()?;
        let vocab = ctx.vocab(&splits)?;
        let queries: Vec<&QaRecord> = splits.by_name(&ctx.split(split))?.iter().collect();
        let ids: Vec<&str> = splits.train.iter().map(|r| r.id.as_str()).collect();
        Some(mean_lengths(&ids, &queries, &splits.train, &vocab, ctx.max_context(&vocab)?)?)
    } else {
        None
    };
    let demo_len = demo_len.or(measured.map(|m| m.0)).context("no demonstration length")?;
    let rows = n_values
        .iter()
        .map(|&n| {
            let q = match (query_len, target_ratio) {
                (Some(q), _) => q,
                (None, Some(r)) => solve_query_length(r, n, x, demo_len)?,
                (None, None) => measured.map(|m| m.1).unwrap_or(0.0),
            };
            Ok(budget_report(&vec![demo_len; n], q, x)?)
        })
        .collect::<Result<Vec<BudgetRow>>>()?;
    println!("{:>3} {:>3} {:>10} {:>12} {:>10} {:>8}", "N", "x", "query", "uncompressed", "compressed", "ratio");
    for r in &rows {
        println!(
            "{:>3} {:>3} {:>10.2} {:>12.2} {:>10.2} {:>7.2}%",
            r.n,
            r.x,
            r.query_len,
            r.uncompressed,
            r.compressed,
            100.0 * r.ratio
        );
    }
    if let Some(out) = out {
        write_json(&rows, out)?;
    }
    Ok(())
}

fn attention_cmd(ctx: &Ctx, checkpoint: &Option<PathBuf>, split: &Option<String>, out: &Option<PathBuf>) -> Result<()> {
    let splits = ctx.splits()?;
    let vocab = ctx.vocab(&splits)?;
    let bundle = load_model(&or_default(checkpoint, "stage2.ckpt"), &vocab)?;
    let records = encode_records(splits.by_name(&ctx.split(split))?, &vocab)?;
    let shares = attention_report(&bundle, &vocab, &records, ctx.threads)?;
    print!("{}", format_attention_table(&shares));
    let out = or_default(out, "attention.json");
    write_json(&shares, &out)?;
    Ok(())
}
