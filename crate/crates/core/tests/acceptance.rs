//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Result};
use common::*;
use pcc_core::compression::{build_demo_bank, demo_plan, self_compress, CompressedDemo, DemoBank, Provenance, SourceLengths};
use pcc_core::dataset::*;
use pcc_core::evaluation::*;
use pcc_core::inference::{infer_batch, write_inference_jsonl, DemoSource};
use pcc_core::model::*;
use pcc_core::parallel::threads_from_env;
use pcc_core::retrieval::{retrieve_top_k, Bm25Index, Strategy};
use pcc_core::tensor::{Graph, SplitMix64, Tensor};
use pcc_core::tokenizer::*;
use pcc_core::training::*;

type Outcome = Result<(bool, String)>;

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let (n, x, mean_len, target) = (16, 16, 751.41, 0.9368);
    let q = solve_query_length(target, n, x, mean_len)?;
    let row = budget_report(&vec![mean_len; n], q, x)?;
    let arithmetic = t.elapsed();
    let v = tiny_vocab();
    let mut b = ModelBundle::<f32>::init(tiny_config(&v, 64), 0)?;
    b.set_projection(Projection::near_identity(16, 0.01, &mut SplitMix64::new(0)));
    let rec = &tiny_records(&v, 1, 0)[0];
    let demo = self_compress(rec, &b, &v, 16)?;
    let ok = (row.ratio - target).abs() <= 5e-4
        && row.per_demo_compressed == 16
        && demo.vectors.rows() == 16
        && arithmetic.as_secs_f64() < 1.0;
    Ok((
        ok,
        format!(
            "Q = {q:.2}, ratio = {:.4}%, per-demo compressed = {} (bank entry rows {}), {:?}",
            100.0 * row.ratio,
            row.per_demo_compressed,
            demo.vectors.rows(),
            arithmetic
        ),
    ))
}

fn criterion_2() -> Outcome {
    let v = Vocabulary::build(&["what does this protein do"], 1, CODEBOOK_SIZE);
    let q = v.encode_text("what does this protein do");
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0usize;
    for i in 0..100 {
        let n = rng.range_inclusive(1, 300) as usize;
        let sequence: String = (0..n).map(|_| AMINO_ACIDS.as_bytes()[rng.below(20) as usize] as char).collect();
        let codes: Vec<usize> = (0..n).map(|_| rng.below(CODEBOOK_SIZE as u64) as usize).collect();
        let rec = ProteinRecord {
            id: format!("p{i}"),
            sequence,
            structure: StructureInput::Codes(codes),
        };
        let (t_s, t_x) = encode_protein(&rec, &v, None)?;
        let sep = assemble_prompt(&v, &q, &t_s, &t_x, Layout::Separate, None, 4096)?;
        let joint = assemble_prompt(&v, &q, &t_s, &t_x, Layout::Joint, None, 4096)?;
        let s = sep.segment(SegmentKind::Protein).map_or(0, |r| r.len());
        let j = joint.segment(SegmentKind::Protein).map_or(0, |r| r.len());
        ensure!(j == s - (n + 2), "protein of {n} residues: separate {s}, joint {j}");
        // t_s and t_x together hold 2N tokens; the joint span carries N.
        ensure!(j - 2 == (t_s.len() + t_x.len()) / 2);
        worst = worst.max(n);
    }
    Ok((true, format!("100 proteins up to {worst} residues, joint span == separate - (N + 2)")))
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let v = tiny_vocab();
    let mut b = ModelBundle::<f64>::init(tiny_config(&v, 48), 0)?.attach_lora(&LoraConfig::attention(2, 4.0, 2), 1)?;
    randomize(&mut b, 3, 0.1);
    b.set_projection(Projection::near_identity(16, 0.1, &mut SplitMix64::new(4)));
    let rec = &tiny_records(&v, 1, 4)[0];
    let plan1 = demo_plan(rec, &v, 48)?;
    let plan2 = icl_training_plan(&plan1, 2, 3);
    let raw = Tensor::<f64>::randn(&[6, 16], 1.0, &mut SplitMix64::new(5));
    let run = |b: &ModelBundle<f64>, stage: u8, grads: bool| {
        let mut g = Graph::new();
        let m = TapeModel::new(&mut g, b, |_| grads).unwrap();
        let l = if stage == 1 {
            m.answer_loss(&mut g, &plan1, None, 0).unwrap()
        } else {
            let r = g.constant(raw.clone());
            let vecs = m.project(&mut g, r).unwrap();
            m.answer_loss(&mut g, &plan2, Some(vecs), 0).unwrap()
        };
        let value = g.value(l).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        g.backward(l).unwrap();
        let vars: Vec<_> = m.params.vars.iter().map(|(n, v)| (n.clone(), *v)).collect();
        (value, grads_of(&g, &vars))
    };
    let n_params = b.parameter_count(|_| true);
    let mut parts = Vec::new();
    let mut ok = true;
    for stage in [1u8, 2] {
        let (err, at) = max_grad_error(&b, |_| true, |b| run(b, stage, true).1, |b| run(b, stage, false).0);
        ok &= err < 1e-4;
        parts.push(format!("loss_{stage} worst rel err {err:.2e} ({at})"));
    }
    let elapsed = t.elapsed();
    ok &= elapsed.as_secs() < 120;
    Ok((ok, format!("{n_params} parameters, {}, {elapsed:?}", parts.join("; "))))
}

fn criterion_5() -> Outcome {
    let mut rng = SplitMix64::new(5);
    let book = Codebook::random(16, &mut rng);
    let features: Vec<Vec<f32>> = (0..2000).map(|_| (0..16).map(|_| rng.normal() as f32).collect()).collect();
    let scan: Vec<usize> = features
        .iter()
        .map(|f| {
            let mut best = (f64::INFINITY, 0);
            for j in 0..CODEBOOK_SIZE {
                let d: f64 = f.iter().zip(book.code(j)).map(|(&a, &c)| (a as f64 - c as f64).powi(2)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    let quant_ok = quantize_structure(&features, &book)? == scan;

    let keys: Vec<Vec<f32>> = (0..300).map(|_| (0..8).map(|_| rng.normal() as f32).collect()).collect();
    let bank = DemoBank {
        x: 1,
        dim: 8,
        entries: keys
            .iter()
            .enumerate()
            .map(|(i, k)| CompressedDemo {
                id: format!("d{i:03}"),
                vectors: Tensor::zeros(&[1, 8]),
                key: k.clone(),
                lengths: SourceLengths { question: 1, protein: 1, answer: 1 },
            })
            .collect(),
        provenance: Provenance { checkpoint: [0; 32], dataset: [0; 32] },
    };
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let mut retrieval_ok = true;
    for _ in 0..20 {
        let q: Vec<f32> = (0..8).map(|_| rng.normal() as f32).collect();
        let mut oracle: Vec<(String, f64)> = bank
            .entries
            .iter()
            .map(|e| {
                let dot: f64 = q.iter().zip(&e.key).map(|(&a, &b)| a as f64 * b as f64).sum();
                (e.id.clone(), dot / (norm(&q) * norm(&e.key)))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = retrieve_top_k(&q, &bank, 10, &HashSet::new())?;
        retrieval_ok &= got.iter().map(|s| s.id.clone()).collect::<Vec<_>>() == oracle[..10].iter().map(|o| o.0.clone()).collect::<Vec<_>>();
    }

    let doc = |id: &str, s: &str| (id.to_string(), s.split(' ').map(String::from).collect::<Vec<_>>());
    let index = Bm25Index::new(&[doc("d0", "a b c"), doc("d1", "a a d"), doc("d2", "b e")], 1.5, 0.75)?;
    let query: Vec<String> = vec!["a".into(), "b".into()];
    let (k1, b, avgdl) = (1.5f64, 0.75f64, 8.0f64 / 3.0);
    let idf = |df: f64| ((3.0 - df + 0.5) / (df + 0.5) + 1.0).ln();
    let term = |tf: f64, len: f64, df: f64| idf(df) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
    let want = [term(1.0, 3.0, 2.0) + term(1.0, 3.0, 2.0), term(2.0, 3.0, 2.0), term(1.0, 2.0, 2.0)];
    let bm25_err = (0..3).map(|i| (index.score(i, &query) - want[i]).abs()).fold(0.0, f64::max);

    Ok((
        quant_ok && retrieval_ok && bm25_err < 1e-9,
        format!("quantize == 512-code scan: {quant_ok}; top-k == sorted scan: {retrieval_ok}; BM25 max err {bm25_err:.1e}"),
    ))
}

fn criterion_6() -> Outcome {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<std::collections::BTreeSet<_>>();
    let e = emji(&[set(&["A", "B"])], &[set(&["B", "C"])])?;
    let b = bleu("a b c d", "a b x d", 2)?.score;
    let r = rouge("a c", "a b c", RougeVariant::L);
    let ok = (e - 1.0 / 3.0).abs() < 1e-9 && (b - 0.5).abs() < 1e-9 && (r - 0.8).abs() < 1e-9;
    Ok((ok, format!("EMJI {e:.12}, BLEU-2 {b:.12}, ROUGE-L {r:.12}")))
}

/// One full run of the pipeline on the default synthetic task.
struct Run {
    task: SyntheticTask,
    vocab: Vocabulary,
    s1: ModelBundle<f32>,
    s2: Stage2Outcome,
    stage1_loss: (f64, f64),
    stage2_loss: (f64, f64),
    seconds: f64,
}

fn full_run(seed: u64, threads: usize) -> Result<Run> {
    let t = Instant::now();
    let task = generate_dataset(&SyntheticTaskSpec { seed, ..Default::default() })?;
    let vocab = Vocabulary::build(&text_corpus(&task.splits.train), 1, CODEBOOK_SIZE);
    let train = encode_records(&task.splits.train, &vocab)?;
    let val = encode_records(&task.splits.val, &vocab)?;
    let base = ModelBundle::<f32>::init(ModelConfig::toy(vocab.len(), vocab.protein_count()), seed)?;
    let cfg = |stage| TrainConfig { seed, ..TrainConfig::toy(stage) };
    let pre = pretrain(&train, &vocab, &base, &cfg(0), threads)?.bundle;
    let before1 = mean_answer_loss(&pre, &vocab, &val, threads)?;
    let s1 = train_stage1(&train, &vocab, &pre, &cfg(1), threads)?.bundle;
    let after1 = mean_answer_loss(&s1, &vocab, &val, threads)?;
    let c2 = cfg(2);
    let n = c2.n_values[0];
    let s2 = train_stage2(&train, &vocab, &s1, &c2, threads)?;
    let nb = Neighbors::dense(&val, &s2.demos, &s1, &vocab, n, true, threads)?;
    let before2 = stage2_eval_loss(&stage2_start(&s1, &c2), &vocab, &val, &s2.demos, &nb, n, threads)?;
    let after2 = stage2_eval_loss(&s2.bundle, &vocab, &val, &s2.demos, &nb, n, threads)?;
    Ok(Run {
        task,
        vocab,
        s1,
        s2,
        stage1_loss: (before1, after1),
        stage2_loss: (before2, after2),
        seconds: t.elapsed().as_secs_f64(),
    })
}

fn criterion_4(run: &Run) -> Outcome {
    let before = run.s1.tensor_hashes();
    let after = run.s2.bundle.tensor_hashes();
    let changed: Vec<&String> = before.keys().filter(|k| after.get(*k) != before.get(*k)).collect();
    let d = run.s2.bundle.config.hidden_dim;
    let count = run.s2.bundle.parameter_count(stage2_trainable);
    Ok((
        changed.is_empty() && count == d * d + d,
        format!("{} backbone tensors, {} changed; trainable {count} == {d}^2 + {d}", before.len(), changed.len()),
    ))
}

fn criterion_7(run: &Run) -> Outcome {
    let drop = |(a, b): (f64, f64)| 1.0 - b / a;
    let (d1, d2) = (drop(run.stage1_loss), drop(run.stage2_loss));
    Ok((
        d1 >= 0.5 && d2 >= 0.3 && run.seconds < 900.0,
        format!(
            "stage 1 val CE {:.4} -> {:.4} ({:.1}% drop, 1 epoch); stage 2 val CE at N=4 {:.4} -> {:.4} ({:.1}% drop, 3 epochs); {:.0}s",
            run.stage1_loss.0,
            run.stage1_loss.1,
            100.0 * d1,
            run.stage2_loss.0,
            run.stage2_loss.1,
            100.0 * d2,
            run.seconds
        ),
    ))
}

/// OOD EMJI for zero-shot, dense 4-shot and random 4-shot.
fn ood_emji(run: &Run, threads: usize) -> Result<[f64; 3]> {
    let train = encode_records(&run.task.splits.train, &run.vocab)?;
    let x = TrainConfig::toy(2).x;
    let (bank, _) = build_demo_bank(&train, &run.s2.bundle, &run.vocab, x, threads)?;
    let source = DemoSource { bank: &bank, bm25: None };
    let ood = &run.task.splits.test_ood;
    let score = |strategy, n| -> Result<f64> {
        let out = infer_batch(ood, &run.vocab, &run.s2.bundle, Some(&source), strategy, n, 0, 64, threads)?;
        Ok(score_records(&out, ood, &run.task.lexicon)?.emji)
    };
    Ok([score(Strategy::Dense, 0)?, score(Strategy::Dense, 4)?, score(Strategy::Random, 4)?])
}

fn criterion_8(per_seed: &[[f64; 3]]) -> Outcome {
    let mean = |k: usize| per_seed.iter().map(|s| s[k]).sum::<f64>() / per_seed.len() as f64;
    let (zero, dense, random) = (mean(0), mean(1), mean(2));
    let seeds: Vec<String> = per_seed
        .iter()
        .map(|s| format!("[{:.4} {:.4} {:.4}]", s[0], s[1], s[2]))
        .collect();
    Ok((
        dense >= zero && dense >= random,
        format!(
            "OOD EMJI over {} seeds: dense 4-shot {dense:.4}, random 4-shot {random:.4}, zero-shot {zero:.4}; per seed [zero dense random] {}",
            per_seed.len(),
            seeds.join(" ")
        ),
    ))
}

/// A small pipeline whose artifacts are written to `dir`.
fn small_pipeline(dir: &Path, threads: usize) -> Result<Vec<(String, Vec<u8>)>> {
    let spec = SyntheticTaskSpec {
        n_train: 48,
        n_val: 12,
        n_test: 4,
        n_test_ood: 4,
        seed: 11,
        ..Default::default()
    };
    let task = generate_dataset(&spec)?;
    task.save(&dir.join("data"))?;
    let vocab = Vocabulary::build(&text_corpus(&task.splits.train), 1, CODEBOOK_SIZE);
    let train = encode_records(&task.splits.train, &vocab)?;
    let base = ModelBundle::<f32>::init(ModelConfig::toy(vocab.len(), vocab.protein_count()), 11)?;
    let cfg = |stage| TrainConfig { seed: 11, epochs: 1, ..TrainConfig::toy(stage) };
    let pre = pretrain(&train, &vocab, &base, &cfg(0), threads)?.bundle;
    let s1 = train_stage1(&train, &vocab, &pre, &cfg(1), threads)?.bundle;
    let s2 = train_stage2(&train, &vocab, &s1, &cfg(2), threads)?.bundle;
    save_checkpoint(&s1, &dir.join("stage1.ckpt"))?;
    save_checkpoint(&s2, &dir.join("stage2.ckpt"))?;
    let (bank, _) = build_demo_bank(&train, &s2, &vocab, 8, threads)?;
    bank.save(&dir.join("bank.bin"))?;
    let source = DemoSource { bank: &bank, bm25: None };
    let mut out = infer_batch(&task.splits.val, &vocab, &s2, Some(&source), Strategy::Dense, 2, 11, 16, threads)?;
    out.extend(infer_batch(&task.splits.val, &vocab, &s2, Some(&source), Strategy::Random, 2, 11, 16, threads)?);
    write_inference_jsonl(&out, &dir.join("inference.jsonl"))?;
    let mut files = Vec::new();
    for name in ["data/train.jsonl", "stage1.ckpt", "stage2.ckpt", "bank.bin", "inference.jsonl"] {
        files.push((name.to_string(), std::fs::read(dir.join(name))?));
    }
    Ok(files)
}

fn criterion_9(threads: usize) -> Outcome {
    let root = tempfile::tempdir()?;
    let a = small_pipeline(&root.path().join("a"), threads)?;
    let b = small_pipeline(&root.path().join("b"), threads)?;
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let sizes: Vec<String> = a.iter().map(|(n, bytes)| format!("{n} {}B", bytes.len())).collect();
    Ok((
        differing.is_empty(),
        format!("two runs, seed 11: {}; differing: {differing:?}", sizes.join(", ")),
    ))
}

fn criterion_10(run: &Run, threads: usize) -> Outcome {
    let val = encode_records(&run.task.splits.val, &run.vocab)?;
    let fresh = ModelBundle::<f32>::init(ModelConfig::toy(run.vocab.len(), run.vocab.protein_count()), 99)?;
    let mut ok = true;
    let mut tables = Vec::new();
    for (name, bundle) in [("untrained", &fresh), ("stage 1", &run.s1), ("stage 2", &run.s2.bundle)] {
        let shares = attention_report(bundle, &run.vocab, &val, threads)?;
        let total: f64 = shares.iter().map(|s| s.percentage).sum();
        ok &= shares.len() == 3 && (total - 100.0).abs() <= 0.01;
        let cells: Vec<String> = shares
            .iter()
            .map(|s| format!("{} {:.3} {:.2}%", s.label, s.avg_score, s.percentage))
            .collect();
        tables.push(format!("{name}: {} (sum {total:.4})", cells.join(" | ")));
    }
    Ok((ok, tables.join("; ")))
}

struct Results(BTreeMap<usize, (bool, String)>);

impl Results {
    fn record(&mut self, id: usize, outcome: std::thread::Result<Outcome>) {
        let (ok, detail) = match outcome {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".to_string()),
        };
        eprintln!("criterion {id} finished");
        self.0.insert(id, (ok, detail));
    }
}

fn guarded<T>(f: impl FnOnce() -> T) -> std::thread::Result<T> {
    catch_unwind(AssertUnwindSafe(f))
}

fn main() {
    let threads = threads_from_env();
    let mut r = Results(BTreeMap::new());
    r.record(1, guarded(criterion_1));
    r.record(2, guarded(criterion_2));
    r.record(3, guarded(criterion_3));
    r.record(5, guarded(criterion_5));
    r.record(6, guarded(criterion_6));
    r.record(9, guarded(|| criterion_9(threads)));

    let mut per_seed = Vec::new();
    let mut failed_seed = None;
    for seed in 0..3u64 {
        match guarded(|| full_run(seed, threads)) {
            Ok(Ok(run)) => {
                eprintln!("pipeline for seed {seed} took {:.0}s", run.seconds);
                if seed == 0 {
                    r.record(4, guarded(|| criterion_4(&run)));
                    r.record(7, guarded(|| criterion_7(&run)));
                    r.record(10, guarded(|| criterion_10(&run, threads)));
                }
                match guarded(|| ood_emji(&run, threads)) {
                    Ok(Ok(s)) => per_seed.push(s),
                    Ok(Err(e)) => failed_seed = Some(format!("seed {seed}: {e:#}")),
                    Err(_) => failed_seed = Some(format!("seed {seed}: panicked")),
                }
            }
            other => {
                let msg = match other {
                    Ok(Err(e)) => format!("pipeline failed for seed {seed}: {e:#}"),
                    _ => format!("pipeline panicked for seed {seed}"),
                };
                if seed == 0 {
                    for id in [4, 7, 10] {
                        r.record(id, Ok(Err(anyhow::anyhow!(msg.clone()))));
                    }
                }
                failed_seed = Some(msg);
            }
        }
    }
    match failed_seed {
        Some(msg) => r.record(8, Ok(Err(anyhow::anyhow!(msg)))),
        None => r.record(8, guarded(|| criterion_8(&per_seed))),
    }
    let mut all = true;
    for (id, (ok, detail)) in &r.0 {
        println!("[criterion {id}] {} {detail}", if *ok { "PASS" } else { "FAIL" });
        all &= ok;
    }
    if !all {
        std::process::exit(1);
    }
}
