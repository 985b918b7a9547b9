mod common;

use common::*;
use pcc_core::compression::{build_raw_bank, demo_plan};
use pcc_core::model::*;
use pcc_core::tensor::{Graph, SplitMix64, Tensor};
use pcc_core::tokenizer::{assemble_prompt, Layout, PromptPlan, SegmentKind, Slot};
use pcc_core::training::*;
use pcc_core::CoreError;
use proptest::prelude::*;

fn setup(max_context: usize) -> (pcc_core::tokenizer::Vocabulary, ModelBundle<f32>) {
    let v = tiny_vocab();
    let b = ModelBundle::<f32>::init(tiny_config(&v, max_context), 1).unwrap();
    (v, b)
}

fn quick(stage: u8) -> TrainConfig {
    TrainConfig {
        stage,
        lr: 1e-2,
        batch_size: 2,
        epochs: 1,
        lora_rank: 2,
        lora_alpha: 4.0,
        n_values: vec![1, 2],
        x: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn mask_covers_the_answer_only() {
    let v = tiny_vocab();
    let rec = &tiny_records(&v, 1, 1)[0];
    let plan = demo_plan(rec, &v, 64).unwrap();
    let mask = answer_mask(&plan).unwrap();
    assert_eq!(mask.len(), plan.len() - 1);
    let n_answer = rec.answer.len() + 1;
    assert_eq!(mask.iter().filter(|&&m| m).count(), n_answer);
    assert!(mask[mask.len() - n_answer..].iter().all(|&m| m));
}

#[test]
fn mask_counts_on_a_hand_built_plan() {
    let mut plan = PromptPlan::default();
    plan.slots = (0..15).map(Slot::Token).collect();
    plan.segments = vec![
        pcc_core::tokenizer::Segment { kind: SegmentKind::TextBefore, range: 0..10 },
        pcc_core::tokenizer::Segment { kind: SegmentKind::Answer, range: 10..15 },
    ];
    let mask = answer_mask(&plan).unwrap();
    assert_eq!(mask.iter().filter(|&&m| m).count(), 5);
    assert!(mask[9..].iter().all(|&m| m));
    assert!(mask[..9].iter().all(|&m| !m));
}

#[test]
fn mask_needs_an_answer() {
    let v = tiny_vocab();
    let rec = &tiny_records(&v, 1, 1)[0];
    let plan = assemble_prompt(&v, &rec.question, &rec.t_s, &rec.t_x, Layout::Joint, None, 64).unwrap();
    assert!(answer_mask(&plan).is_err());
    assert!(assemble_prompt(&v, &rec.question, &rec.t_s, &rec.t_x, Layout::Joint, Some(&[]), 64).is_err());
}

#[test]
fn zero_epochs_returns_the_base_model() {
    let (v, b) = setup(64);
    let recs = tiny_records(&v, 4, 1);
    let cfg = TrainConfig { epochs: 0, ..quick(1) };
    let out = train_stage1(&recs, &v, &b, &cfg, 1).unwrap();
    assert_eq!(out.bundle.params, b.params);
    assert!(out.curve.steps.is_empty());
}

#[test]
fn stage1_memorises_one_example() {
    let v = tiny_vocab();
    let init = ModelBundle::<f32>::init(ModelConfig::toy(v.len(), v.protein_count()), 3).unwrap();
    // Stage 1 cannot move the text embeddings or the final norm, so it
    // starts, as in the pipeline, from a backbone pretrained on text.
    let text = tiny_records(&v, 8, 1);
    let pre_cfg = TrainConfig { stage: 0, lr: 1e-2, batch_size: 4, epochs: 20, ..TrainConfig::default() };
    let base = pretrain(&text, &v, &init, &pre_cfg, 1).unwrap().bundle;
    let recs = tiny_records(&v, 1, 2);
    let before = mean_answer_loss(&base, &v, &recs, 1).unwrap();
    let cfg = TrainConfig { lr: 1e-2, batch_size: 1, epochs: 200, position_jitter: 0, ..TrainConfig::toy(1) };
    let out = train_stage1(&recs, &v, &base, &cfg, 1).unwrap();
    assert_eq!(out.curve.steps.len(), 200);
    let after = mean_answer_loss(&out.bundle, &v, &recs, 1).unwrap();
    assert!(after < 0.1 * before, "loss {before} -> {after}");
}

#[test]
fn stage1_only_touches_adapter_targets_and_protein_rows() {
    let (v, b) = setup(64);
    let recs = tiny_records(&v, 6, 3);
    let out = train_stage1(&recs, &v, &b, &quick(1), 1).unwrap();
    let before = b.tensor_hashes();
    let after = out.bundle.tensor_hashes();
    assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
    let targets: Vec<String> = (0..2).flat_map(names::attention_weights).collect();
    for (name, h) in &before {
        let may_change = targets.contains(name) || name == names::EMBED_PROTEIN;
        if may_change {
            assert_ne!(&after[name], h, "{name} should have been trained");
        } else {
            assert_eq!(&after[name], h, "{name} changed");
        }
    }
}

#[test]
fn stage2_freezes_the_backbone() {
    let (v, b) = setup(64);
    let recs = tiny_records(&v, 8, 4);
    let out = train_stage2(&recs, &v, &b, &quick(2), 1).unwrap();
    let before = b.tensor_hashes();
    let after = out.bundle.tensor_hashes();
    for (name, h) in &before {
        assert_eq!(&after[name], h, "{name} changed");
    }
    let trainable = out.bundle.parameter_count(stage2_trainable);
    assert_eq!(trainable, 16 * 16 + 16);
    assert_eq!(after.len(), before.len() + 2);
    assert!(!out.curve.steps.is_empty());
}

#[test]
fn stage2_without_demos_is_the_stage1_loss() {
    let (v, mut b) = setup(64);
    randomize(&mut b, 5, 0.05);
    let recs = tiny_records(&v, 6, 5);
    let raw = build_raw_bank(&recs, &b, &v, 3, 1).entries;
    let nb = Neighbors::dense(&recs, &raw, &b, &v, 0, true, 1).unwrap();
    b.set_projection(Projection::near_identity(16, 0.01, &mut SplitMix64::new(0)));
    let l2 = stage2_eval_loss(&b, &v, &recs, &raw, &nb, 0, 1).unwrap();
    let l1 = mean_answer_loss(&b, &v, &recs, 1).unwrap();
    assert!((l1 - l2).abs() < 1e-6);

    let plan = demo_plan(&recs[0], &v, 64).unwrap();
    let mut g = Graph::new();
    let m = TapeModel::new(&mut g, &b, |_| false).unwrap();
    let tape = m.answer_loss(&mut g, &icl_training_plan(&plan, 0, 3), None, 0).unwrap();
    let session = eval_answer_loss(&b, &plan, None, 0).unwrap();
    assert!((g.value(tape).data()[0] as f64 - session).abs() < 1e-6);
}

#[test]
fn stage2_gradient_matches_finite_differences() {
    let v = tiny_vocab();
    let mut b = ModelBundle::<f64>::init(tiny_config(&v, 48), 2).unwrap();
    randomize(&mut b, 6, 0.1);
    b.set_projection(Projection::near_identity(16, 0.1, &mut SplitMix64::new(1)));
    let rec = &tiny_records(&v, 1, 6)[0];
    let plan = icl_training_plan(&demo_plan(rec, &v, 48).unwrap(), 2, 3);
    let raw = Tensor::<f64>::randn(&[6, 16], 1.0, &mut SplitMix64::new(2));
    let run = |b: &ModelBundle<f64>, grads: bool| {
        let mut g = Graph::new();
        let m = TapeModel::new(&mut g, b, |n| grads && stage2_trainable(n)).unwrap();
        let r = g.constant(raw.clone());
        let vecs = m.project(&mut g, r).unwrap();
        let l = m.answer_loss(&mut g, &plan, Some(vecs), 0).unwrap();
        let value = g.value(l).data()[0];
        let out = if grads {
            g.backward(l).unwrap();
            let vars: Vec<_> = [names::PROJ_WEIGHT, names::PROJ_BIAS]
                .iter()
                .map(|n| (n.to_string(), m.params.var(n).unwrap()))
                .collect();
            grads_of(&g, &vars)
        } else {
            Vec::new()
        };
        (value, out)
    };
    let (err, at) = max_grad_error(&b, stage2_trainable, |b| run(b, true).1, |b| run(b, false).0);
    assert!(err < 1e-4, "worst {err} at {at}");
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let (v, b) = setup(64);
    let recs = tiny_records(&v, 8, 7);
    let cfg = TrainConfig { position_jitter: 8, epochs: 2, ..quick(1) };
    let a = train_stage1(&recs, &v, &b, &cfg, 1).unwrap();
    let c = train_stage1(&recs, &v, &b, &cfg, 3).unwrap();
    assert_eq!(a.curve, c.curve);
    assert_eq!(a.bundle.params, c.bundle.params);
    let s2a = train_stage2(&recs, &v, &a.bundle, &quick(2), 1).unwrap();
    let s2c = train_stage2(&recs, &v, &a.bundle, &quick(2), 2).unwrap();
    assert_eq!(s2a.curve, s2c.curve);
    assert_eq!(s2a.bundle.params, s2c.bundle.params);
    let other = train_stage1(&recs, &v, &b, &TrainConfig { seed: 1, ..cfg }, 1).unwrap();
    assert_ne!(other.curve, a.curve);
}

#[test]
fn stage2_errors_when_too_many_prompts_overflow() {
    let (v, b) = setup(24);
    let recs = tiny_records(&v, 8, 8);
    let cfg = TrainConfig { n_values: vec![2], x: 3, ..quick(2) };
    assert!(matches!(
        train_stage2(&recs, &v, &b, &cfg, 1),
        Err(CoreError::TooManySkipped { .. })
    ));
}

#[test]
fn neighbours_never_include_the_query() {
    let (v, mut b) = setup(64);
    randomize(&mut b, 9, 0.05);
    let recs = tiny_records(&v, 6, 9);
    let raw = build_raw_bank(&recs, &b, &v, 3, 1).entries;
    let nb = Neighbors::dense(&recs, &raw, &b, &v, 5, true, 1).unwrap();
    for (q, list) in nb.lists.iter().enumerate() {
        assert_eq!(list.len(), 5);
        assert!(list.iter().all(|&(j, _)| j != q));
        assert!(list.windows(2).all(|w| w[0].1 >= w[1].1));
    }
    let plan = demo_plan(&recs[0], &v, 64).unwrap();
    let (p, rows) = nb.icl_input(0, &plan, &raw, 2).unwrap().unwrap();
    let rows = rows.unwrap();
    assert_eq!(p.vector_count(), 6);
    let best = &raw[nb.lists[0][0].0].raw;
    assert_eq!(rows.slice_rows(3, 6), *best, "best demo sits next to the query");
}

#[test]
fn config_files_reject_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"stage": 2, "lr": 0.001, "n_values": [4], "x": 8}"#).unwrap();
    let cfg = TrainConfig::load(&good).unwrap();
    assert_eq!((cfg.stage, cfg.x, cfg.batch_size), (2, 8, 4));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"learning_rate": 0.1}"#).unwrap();
    assert!(TrainConfig::load(&bad).is_err());
    assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn loss_curve_csv() {
    let (v, b) = setup(64);
    let out = train_stage1(&tiny_records(&v, 4, 1), &v, &b, &quick(1), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_loss_csv(&out.curve, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,epoch,loss");
    assert_eq!(lines.len(), 1 + out.curve.steps.len());
    assert_eq!(out.curve.epoch_means.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_never_touches_question_or_protein(seed in any::<u64>(), demos in 0usize..6) {
        let v = tiny_vocab();
        let rec = &tiny_records(&v, 1, seed)[0];
        let plan = demo_plan(rec, &v, 64).unwrap().with_demo_prefix(demos);
        let mask = answer_mask(&plan).unwrap();
        for s in &plan.segments {
            if s.kind != SegmentKind::Answer {
                for p in s.range.clone() {
                    if p > 0 {
                        prop_assert!(!mask[p - 1]);
                    }
                }
            }
        }
        prop_assert_eq!(mask.iter().filter(|&&m| m).count(), rec.answer.len() + 1);
    }
}
