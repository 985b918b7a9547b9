mod common;

use common::*;
use pcc_core::model::*;
use pcc_core::tensor::{Graph, SplitMix64, Tensor};
use pcc_core::tokenizer::{assemble_prompt, Layout};
use pcc_core::CoreError;
use proptest::prelude::*;

fn tiny_bundle(seed: u64) -> ModelBundle<f32> {
    let v = tiny_vocab();
    let mut b = ModelBundle::init(tiny_config(&v, 32), seed).unwrap();
    randomize(&mut b, seed + 1, 0.05);
    b
}

fn random_ids(b: &ModelBundle<f32>, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| rng.below(b.config.vocab_size as u64) as usize).collect()
}

#[test]
fn embed_empty_sequence() {
    let b = tiny_bundle(0);
    let e = embed_tokens(&b, &[]).unwrap();
    assert_eq!(e.shape(), &[0, b.config.hidden_dim]);
}

#[test]
fn embed_is_token_plus_position() {
    let b = tiny_bundle(0);
    let e = embed_tokens(&b, &[7, 7, 3]).unwrap();
    let pos = b.param(names::POS_EMBED).unwrap();
    for (t, id) in [7usize, 7, 3].into_iter().enumerate() {
        let expect: Vec<f32> = b.token_row(id).unwrap().iter().zip(pos.row(t)).map(|(a, p)| a + p).collect();
        assert_eq!(e.row(t), &expect[..]);
    }
    for j in 0..b.config.hidden_dim {
        let got = e.row(1)[j] - e.row(0)[j];
        let want = pos.row(1)[j] - pos.row(0)[j];
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn embed_rejects_out_of_range_id() {
    let b = tiny_bundle(0);
    let v = b.config.vocab_size;
    match embed_tokens(&b, &[1, 2, v]) {
        Err(CoreError::TokenOutOfRange { position, id, vocab }) => {
            assert_eq!((position, id, vocab), (2, v, v));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn overflow_carries_lengths() {
    let b = tiny_bundle(0);
    let ids = vec![1; 33];
    assert!(matches!(
        forward_tokens(&b, &ids, false),
        Err(CoreError::ContextOverflow { len: 33, max: 32 })
    ));
    let e = Tensor::<f32>::zeros(&[33, b.config.hidden_dim]);
    assert!(matches!(
        forward_embeddings(&b, &e, false),
        Err(CoreError::ContextOverflow { len: 33, max: 32 })
    ));
}

#[test]
fn single_token_attends_to_itself() {
    let b = tiny_bundle(0);
    let out = forward_tokens(&b, &[4], true).unwrap();
    let rec = out.attention.unwrap();
    for l in 0..rec.n_layers() {
        for h in 0..rec.heads {
            assert_eq!(rec.row(l, h, 0), vec![1.0]);
        }
    }
}

#[test]
fn perturbing_a_position_leaves_the_past_unchanged() {
    let b = tiny_bundle(1);
    let ids = random_ids(&b, 12, 5);
    let embs = embed_tokens(&b, &ids).unwrap();
    let base = hidden_states(&b, &embs).unwrap();
    for t in [0usize, 5, 11] {
        let mut p = embs.clone();
        for v in p.row_mut(t) {
            *v += 0.5;
        }
        let h = hidden_states(&b, &p).unwrap();
        for i in 0..t {
            assert_eq!(h.row(i), base.row(i), "row {i} changed when perturbing {t}");
        }
        assert_ne!(h.row(t), base.row(t));
    }
}

#[test]
fn token_path_matches_embedding_path() {
    let b = tiny_bundle(2);
    let ids = random_ids(&b, 20, 9);
    let fused = forward_tokens(&b, &ids, true).unwrap();
    let two = forward_embeddings(&b, &embed_tokens(&b, &ids).unwrap(), true).unwrap();
    assert_eq!(fused.hidden, two.hidden);
    assert_eq!(fused.logits, two.logits);
    assert_eq!(fused.attention, two.attention);
}

#[test]
fn tape_matches_session() {
    let b = tiny_bundle(3).attach_lora(&LoraConfig::attention(2, 4.0, 2), 1).unwrap();
    let mut b = b;
    randomize(&mut b, 11, 0.05);
    let ids = random_ids(&b, 15, 2);
    let embs = embed_tokens(&b, &ids).unwrap();
    let session = forward_embeddings(&b, &embs, false).unwrap();
    let mut g = Graph::new();
    let model = TapeModel::new(&mut g, &b, |_| false).unwrap();
    let x = g.constant(embs);
    let h = model.hidden(&mut g, x).unwrap();
    let logits = model.logits(&mut g, h).unwrap();
    assert_eq!(g.value(h), &session.hidden);
    assert_eq!(g.value(logits), &session.logits);
}

#[test]
fn tape_plan_embedding_matches_session() {
    let v = tiny_vocab();
    let mut b = ModelBundle::<f32>::init(tiny_config(&v, 64), 4).unwrap();
    randomize(&mut b, 4, 0.05);
    let rec = &tiny_records(&v, 1, 3)[0];
    let plan = assemble_prompt(&v, &rec.question, &rec.t_s, &rec.t_x, Layout::Joint, Some(&rec.answer), 64)
        .unwrap()
        .with_demo_prefix(3);
    let vectors = Tensor::randn(&[3, b.config.hidden_dim], 0.1, &mut SplitMix64::new(1));
    let rows = embed_plan_rows(&b, &plan, Some(&vectors), 2).unwrap();
    let mut g = Graph::new();
    let model = TapeModel::new(&mut g, &b, |_| false).unwrap();
    let vv = g.constant(vectors);
    let x = model.embed_plan(&mut g, &plan, Some(vv), 2).unwrap();
    assert_eq!(g.value(x), &rows);
}

#[test]
fn zero_initialised_lora_is_inert() {
    let b = tiny_bundle(5);
    let attached = b.attach_lora(&LoraConfig::attention(4, 8.0, 2), 3).unwrap();
    let ids = random_ids(&b, 10, 1);
    let base = forward_tokens(&b, &ids, false).unwrap();
    let with = forward_tokens(&attached, &ids, false).unwrap();
    assert_eq!(base.hidden, with.hidden);
    assert_eq!(base.logits, with.logits);
}

#[test]
fn merge_matches_attach() {
    let b = tiny_bundle(6);
    let mut attached = b.attach_lora(&LoraConfig::attention(4, 8.0, 2), 3).unwrap();
    let mut rng = SplitMix64::new(8);
    for (name, t) in attached.params.iter_mut() {
        if name.starts_with(names::LORA_PREFIX) {
            for v in t.data_mut() {
                *v += (rng.normal() * 0.1) as f32;
            }
        }
    }
    let merged = attached.merge_lora().unwrap();
    assert!(merged.lora.is_none());
    assert!(merged.params.keys().all(|k| !k.starts_with(names::LORA_PREFIX)));
    let ids = random_ids(&b, 16, 4);
    let a = forward_tokens(&attached, &ids, false).unwrap();
    let m = forward_tokens(&merged, &ids, false).unwrap();
    assert!(a.logits.max_abs_diff(&m.logits) < 1e-5);
    assert!(a.logits.max_abs_diff(&forward_tokens(&b, &ids, false).unwrap().logits) > 1e-3);
}

#[test]
fn apply_lora_checks_dimensions() {
    let b = tiny_bundle(0);
    let target = names::layer(0, "attn.q.weight");
    let mut rng = SplitMix64::new(0);
    let bad = LoraAdapter::init(&target, 16, 8, 2, 4.0, &mut rng);
    assert!(apply_lora(&b, &[bad], LoraMode::Attach).is_err());
    let missing = LoraAdapter::init("layers.9.attn.q.weight", 16, 16, 2, 4.0, &mut rng);
    assert!(apply_lora(&b, &[missing], LoraMode::Merge).is_err());
    let good = LoraAdapter::init(&target, 16, 16, 2, 4.0, &mut rng);
    let merged = apply_lora(&b, &[good], LoraMode::Merge).unwrap();
    assert_eq!(merged.param(&target).unwrap(), b.param(&target).unwrap());
}

#[test]
fn lora_parameter_count_follows_config() {
    let cfg = ModelConfig::toy(600, 532);
    let b = ModelBundle::<f32>::init(cfg.clone(), 0).unwrap();
    let attached = b.attach_lora(&LoraConfig::attention(8, 16.0, cfg.n_layers), 0).unwrap();
    let lora = attached.parameter_count(|n| n.starts_with(names::LORA_PREFIX));
    let (d, r, l) = (64, 8, cfg.n_layers);
    // Four attention matrices per layer, each with A [r×d] and B [d×r].
    assert_eq!(lora, l * 4 * 2 * r * d);
    let per_layer = 4 * (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d) + 4 * d;
    let backbone = cfg.vocab_size * d + cfg.max_context * d + l * per_layer + 2 * d;
    assert_eq!(b.parameter_count(|_| true), backbone);
    // Adapters stay under a tenth of the backbone; whether they fall under
    // a twentieth depends on the vocabulary size.
    assert!((lora as f64) < 0.1 * backbone as f64);
    let big = ModelConfig::toy(1000, 532);
    let big_backbone = big.vocab_size * d + big.max_context * d + l * per_layer + 2 * d;
    assert!((lora as f64) < 0.05 * big_backbone as f64);
}

#[test]
fn head_is_tied_to_the_embedding_table() {
    let b = tiny_bundle(7);
    let ids = [1usize, 2, 3];
    let k = 10;
    let before = forward_tokens(&b, &ids, false).unwrap();
    let mut changed = b.clone();
    let base_rows = changed.params[names::EMBED_BASE].rows();
    assert!(k < base_rows);
    for v in changed.params.get_mut(names::EMBED_BASE).unwrap().row_mut(k) {
        *v += 0.3;
    }
    let after = forward_tokens(&changed, &ids, false).unwrap();
    assert_eq!(before.hidden, after.hidden);
    let vocab = b.config.vocab_size;
    for t in 0..ids.len() {
        for j in 0..vocab {
            let (x, y) = (before.logits.row(t)[j], after.logits.row(t)[j]);
            if j == k {
                assert_ne!(x, y);
            } else {
                assert_eq!(x, y);
            }
        }
    }
    let h = before.hidden.row(0);
    let dot: f32 = h.iter().zip(b.token_row(k).unwrap()).map(|(a, e)| a * e).sum();
    assert!((dot - before.logits.row(0)[k]).abs() < 1e-5);
}

#[test]
fn checkpoint_round_trip() {
    let mut b = tiny_bundle(8).attach_lora(&LoraConfig::attention(2, 4.0, 2), 0).unwrap();
    let mut rng = SplitMix64::new(2);
    b.set_projection(Projection::near_identity(16, 0.01, &mut rng));
    let mut buf = Vec::new();
    write_checkpoint(&b, &mut buf).unwrap();
    assert_eq!(&buf[..4], b"PCC1");
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.config, b.config);
    assert_eq!(back.lora, b.lora);
    assert_eq!(back.params, b.params);
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(buf, again);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&b, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap().params, b.params);
}

#[test]
fn checkpoint_rejects_corruption() {
    let b = tiny_bundle(9);
    let mut buf = Vec::new();
    write_checkpoint(&b, &mut buf).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(&mut bad.as_slice()).is_err());
    assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
    let mut nan = b.clone();
    nan.params.get_mut(names::LN_F_GAIN).unwrap().data_mut()[0] = f32::NAN;
    assert!(write_checkpoint(&nan, &mut Vec::new()).is_err());
}

#[test]
fn attention_summary_over_prompt_segments() {
    let v = tiny_vocab();
    let b = tiny_bundle(10);
    let rec = &tiny_records(&v, 1, 1)[0];
    let plan = assemble_prompt(&v, &rec.question, &rec.t_s, &rec.t_x, Layout::Joint, None, 32).unwrap();
    let rows = embed_plan_rows(&b, &plan, None, 0).unwrap();
    let rec = forward_embeddings(&b, &rows, true).unwrap().attention.unwrap();
    let segs: Vec<(String, std::ops::Range<usize>)> =
        plan.segments.iter().map(|s| (s.kind.label().to_string(), s.range.clone())).collect();
    let shares = attention_summary(&rec, &segs).unwrap();
    assert_eq!(shares.len(), 3);
    let total: f64 = shares.iter().map(|s| s.percentage).sum();
    assert!((total - 100.0).abs() < 1e-9);
    let mut bad = segs.clone();
    bad[1].1.start += 1;
    assert!(attention_summary(&rec, &bad).is_err());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let v = tiny_vocab();
    let cfg = tiny_config(&v, 24);
    let mut b = ModelBundle::<f64>::init(cfg, 0).unwrap();
    randomize(&mut b, 3, 0.1);
    let rec = &tiny_records(&v, 1, 4)[0];
    let plan = assemble_prompt(&v, &rec.question, &rec.t_s, &rec.t_x, Layout::Joint, Some(&rec.answer), 24).unwrap();
    let loss = |b: &ModelBundle<f64>| {
        let mut g = Graph::new();
        let m = TapeModel::new(&mut g, b, |_| false).unwrap();
        let l = m.answer_loss(&mut g, &plan, None, 0).unwrap();
        g.value(l).data()[0]
    };
    let analytic = |b: &ModelBundle<f64>| {
        let mut g = Graph::new();
        let m = TapeModel::new(&mut g, b, |_| true).unwrap();
        let l = m.answer_loss(&mut g, &plan, None, 0).unwrap();
        g.backward(l).unwrap();
        let vars: Vec<_> = m.params.vars.iter().map(|(n, v)| (n.clone(), *v)).collect();
        grads_of(&g, &vars)
    };
    let (err, at) = max_grad_error(&b, |_| true, analytic, loss);
    assert!(err < 1e-4, "worst {err} at {at}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_causal_distributions(len in 1usize..20, seed in 0u64..1000) {
        let b = tiny_bundle(seed % 3);
        let ids = random_ids(&b, len, seed);
        let rec = forward_tokens(&b, &ids, true).unwrap().attention.unwrap();
        for l in 0..rec.n_layers() {
            for h in 0..rec.heads {
                for i in 0..len {
                    let row = rec.row(l, h, i);
                    prop_assert_eq!(row.len(), len);
                    prop_assert!(row.iter().all(|&p| p >= 0.0));
                    prop_assert!(row[i + 1..].iter().all(|&p| p == 0.0));
                    let s: f64 = row.iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
