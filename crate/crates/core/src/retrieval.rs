//! Demonstration selection: dense cosine retrieval over pooled hidden
//! states, Okapi BM25 over words and residues, and seeded random picks.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use pcc_tensor::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::compression::{mean_pool, DemoBank};
use crate::dataset::{EncodedRecord, QaRecord};
use crate::error::{CoreError, Result};
use crate::evaluation::metric_tokens;
use crate::model::{embed_plan_rows, hidden_states, ModelBundle};
use crate::tokenizer::{assemble_prompt, Layout, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Bm25,
    Dense,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Bm25 => "bm25",
            Strategy::Dense => "dense",
        })
    }
}

impl FromStr for Strategy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "bm25" => Ok(Strategy::Bm25),
            "dense" => Ok(Strategy::Dense),
            other => Err(CoreError::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Cosine similarity, accumulated in 64-bit. Zero vectors are an error.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Dimension {
            what: "cosine similarity",
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(CoreError::ZeroNorm);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean of the final hidden states over the query's joint-layout prompt
/// (question, protein, question; no answer).
pub fn query_embedding(rec: &EncodedRecord, bundle: &ModelBundle<f32>, vocab: &Vocabulary) -> Result<Vec<f32>> {
    let plan = assemble_prompt(
        vocab,
        &rec.question,
        &rec.t_s,
        &rec.t_x,
        Layout::Joint,
        None,
        bundle.config.max_context,
    )?;
    let rows = embed_plan_rows(bundle, &plan, None, 0)?;
    mean_pool(&hidden_states(bundle, &rows)?)
}

/// A selected demonstration and the score that ranked it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

fn rank(mut scored: Vec<Scored>, k: usize) -> Vec<Scored> {
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    scored
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if k > available {
        return Err(CoreError::NotEnoughCandidates {
            requested: k,
            available,
        });
    }
    Ok(())
}

/// Exhaustive top-`k` by cosine similarity to the bank keys, best first;
/// ties go to the lower id.
pub fn retrieve_top_k(query: &[f32], bank: &DemoBank, k: usize, exclude: &HashSet<String>) -> Result<Vec<Scored>> {
    top_k_by_key(query, bank.entries.iter().map(|e| (e.id.as_str(), e.key.as_slice())), k, exclude)
}

/// [`retrieve_top_k`] over arbitrary `(id, key)` pairs.
pub fn top_k_by_key<'a>(
    query: &[f32],
    items: impl IntoIterator<Item = (&'a str, &'a [f32])>,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<Scored>> {
    let eligible: Vec<_> = items.into_iter().filter(|(id, _)| !exclude.contains(*id)).collect();
    check_k(k, eligible.len())?;
    let scored = eligible
        .into_iter()
        .map(|(id, key)| {
            Ok(Scored {
                id: id.to_string(),
                score: cosine_similarity(query, key)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank(scored, k))
}

/// `k` ids drawn uniformly without replacement, reproducible per seed.
pub fn random_select(ids: &[String], k: usize, seed: u64, exclude: &HashSet<String>) -> Result<Vec<String>> {
    let mut pool: Vec<&String> = ids.iter().filter(|id| !exclude.contains(*id)).collect();
    check_k(k, pool.len())?;
    let mut rng = SplitMix64::new(seed);
    for i in 0..k {
        let j = i + rng.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    Ok(pool[..k].iter().map(|s| s.to_string()).collect())
}

/// Terms of a BM25 document or query: metric tokens of the text plus one
/// `aa_<letter>` term per residue.
pub fn bm25_terms(text: &str, sequence: &str) -> Vec<String> {
    let mut terms = metric_tokens(text);
    terms.extend(sequence.chars().map(|c| format!("aa_{}", c.to_ascii_lowercase())));
    terms
}

/// Okapi BM25 over a fixed document set.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    pub k1: f64,
    pub b: f64,
    ids: Vec<String>,
    tf: Vec<HashMap<String, usize>>,
    doc_len: Vec<usize>,
    avgdl: f64,
    idf: HashMap<String, f64>,
}

impl Bm25Index {
    pub fn new(docs: &[(String, Vec<String>)], k1: f64, b: f64) -> Result<Self> {
        if docs.is_empty() {
            return Err(CoreError::invalid("BM25 index needs at least one document"));
        }
        let mut tf = Vec::with_capacity(docs.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (_, terms) in docs {
            let mut m: HashMap<String, usize> = HashMap::new();
            for t in terms {
                *m.entry(t.clone()).or_default() += 1;
            }
            for t in m.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            doc_len.push(terms.len());
            tf.push(m);
        }
        let n = docs.len() as f64;
        let idf = df
            .into_iter()
            .map(|(t, c)| (t, ((n - c as f64 + 0.5) / (c as f64 + 0.5) + 1.0).ln()))
            .collect();
        let avgdl = doc_len.iter().sum::<usize>() as f64 / n;
        Ok(Self {
            k1,
            b,
            ids: docs.iter().map(|(id, _)| id.clone()).collect(),
            tf,
            doc_len,
            avgdl,
            idf,
        })
    }

    /// Index over training records: question, answer and residues.
    pub fn from_records(records: &[QaRecord]) -> Result<Self> {
        let docs: Vec<_> = records
            .iter()
            .map(|r| (r.id.clone(), bm25_terms(&format!("{} {}", r.question, r.answer), &r.sequence)))
            .collect();
        Self::new(&docs, 1.5, 0.75)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf.get(term).copied().unwrap_or(0.0)
    }

    /// Score of document `doc` for the unique terms of `query`.
    pub fn score(&self, doc: usize, query: &[String]) -> f64 {
        let unique: HashSet<&String> = query.iter().collect();
        let mut terms: Vec<&String> = unique.into_iter().collect();
        terms.sort();
        let norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[doc] as f64 / self.avgdl);
        terms
            .into_iter()
            .map(|t| {
                let f = self.tf[doc].get(t).copied().unwrap_or(0) as f64;
                if f == 0.0 {
                    0.0
                } else {
                    self.idf(t) * f * (self.k1 + 1.0) / (f + norm)
                }
            })
            .sum()
    }

    /// Top-`k` documents for `query`, best first; ties go to the lower id.
    pub fn rank(&self, query: &[String], k: usize, exclude: &HashSet<String>) -> Result<Vec<Scored>> {
        if query.is_empty() {
            return Err(CoreError::EmptyQuery);
        }
        let scored: Vec<Scored> = (0..self.len())
            .filter(|&i| !exclude.contains(&self.ids[i]))
            .map(|i| Scored {
                id: self.ids[i].clone(),
                score: self.score(i, query),
            })
            .collect();
        check_k(k, scored.len())?;
        Ok(rank(scored, k))
    }
}

/// BM25 ranking for a query question and sequence.
pub fn bm25_rank(index: &Bm25Index, question: &str, sequence: &str, k: usize, exclude: &HashSet<String>) -> Result<Vec<Scored>> {
    index.rank(&bm25_terms(question, sequence), k, exclude)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn cosine_fixtures() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(CoreError::ZeroNorm)));
    }

    #[test]
    fn bm25_prefers_matching_doc() {
        let idx = Bm25Index::new(&[("a".into(), terms("x y")), ("b".into(), terms("z w"))], 1.5, 0.75).unwrap();
        let r = idx.rank(&terms("z"), 2, &HashSet::new()).unwrap();
        assert_eq!(r[0].id, "b");
    }

    #[test]
    fn bm25_no_overlap_orders_by_id() {
        let idx = Bm25Index::new(&[("b".into(), terms("x")), ("a".into(), terms("y"))], 1.5, 0.75).unwrap();
        let r = idx.rank(&terms("q"), 2, &HashSet::new()).unwrap();
        assert_eq!(r.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(r.iter().all(|s| s.score == 0.0));
    }

    #[test]
    fn bm25_empty_query() {
        let idx = Bm25Index::new(&[("a".into(), terms("x"))], 1.5, 0.75).unwrap();
        assert!(matches!(bm25_rank(&idx, "", "", 1, &HashSet::new()), Err(CoreError::EmptyQuery)));
    }

    #[test]
    fn random_is_reproducible_permutation() {
        let ids: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        let a = random_select(&ids, 6, 42, &HashSet::new()).unwrap();
        assert_eq!(a, random_select(&ids, 6, 42, &HashSet::new()).unwrap());
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, ids);
        assert!(random_select(&ids, 7, 1, &HashSet::new()).is_err());
    }

    #[test]
    fn strategy_parses() {
        for s in ["random", "bm25", "dense"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }
}
