#![allow(dead_code)]

use pcc_core::dataset::{encode_records, EncodedRecord, QaRecord};
use pcc_core::model::{ModelBundle, ModelConfig};
use pcc_core::tensor::{Graph, Real, SplitMix64, Tensor};
use pcc_core::tokenizer::Vocabulary;

/// A small vocabulary: a few words, 20 amino acids, 16 structure codes.
pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::build(&["what does this protein do", "it binds heme ."], 1, 16)
}

pub fn tiny_config(vocab: &Vocabulary, max_context: usize) -> ModelConfig {
    ModelConfig::tiny(vocab.len(), vocab.protein_count(), max_context)
}

pub fn tiny_records(vocab: &Vocabulary, n: usize, seed: u64) -> Vec<EncodedRecord> {
    encode_records(&tiny_qa_records(n, seed), vocab).unwrap()
}

/// Proteins of 2 to 5 residues; even records answer "it binds heme .".
pub fn tiny_qa_records(n: usize, seed: u64) -> Vec<QaRecord> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let len = rng.range_inclusive(2, 5);
            let letters: Vec<char> = "ACDEFGHIKLMNPQRSTVWY".chars().collect();
            QaRecord {
                id: format!("r{i:03}"),
                question: "what does this protein do".into(),
                sequence: (0..len).map(|_| letters[rng.below(20) as usize]).collect(),
                structure_tokens: (0..len).map(|_| rng.below(16) as usize).collect(),
                answer: if i % 2 == 0 { "it binds heme .".into() } else { "it binds .".into() },
                class: i % 2,
                keywords: vec![],
            }
        })
        .collect()
}

/// Every bias and gain perturbed so no gradient is trivially zero.
pub fn randomize<T: Real>(bundle: &mut ModelBundle<T>, seed: u64, std: f64) {
    let mut rng = SplitMix64::new(seed);
    for t in bundle.params.values_mut() {
        for v in t.data_mut() {
            *v += T::lit(rng.normal() * std);
        }
    }
}

/// Central finite differences of `loss` with respect to every entry of
/// every tensor in `bundle` selected by `filter`, compared with analytic
/// gradients. Returns the worst relative error.
pub fn max_grad_error(
    bundle: &ModelBundle<f64>,
    filter: impl Fn(&str) -> bool,
    analytic: impl Fn(&ModelBundle<f64>) -> Vec<(String, Vec<f64>)>,
    loss: impl Fn(&ModelBundle<f64>) -> f64,
) -> (f64, String) {
    let h = 1e-5;
    let grads = analytic(bundle);
    let mut worst = (0.0, String::new());
    let mut probe = bundle.clone();
    for (name, g) in grads {
        if !filter(&name) {
            continue;
        }
        for i in 0..g.len() {
            let orig = probe.params[&name].data()[i];
            probe.params.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.params.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.params.get_mut(&name).unwrap().data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}] analytic {} fd {fd}", g[i]));
            }
        }
    }
    worst
}

pub fn grads_of(g: &Graph<f64>, vars: &[(String, pcc_core::tensor::Var)]) -> Vec<(String, Vec<f64>)> {
    vars.iter()
        .map(|(n, v)| {
            let numel = g.value(*v).numel();
            (n.clone(), g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; numel]))
        })
        .collect()
}

pub fn rows(t: &Tensor<f32>) -> Vec<Vec<f32>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}
