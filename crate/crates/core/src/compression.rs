//! Joint protein embeddings and self-compression of demonstrations into
//! the hidden states of their last `x` positions.

use std::path::Path;

use pcc_tensor::{Real, Tensor};

use crate::dataset::EncodedRecord;
use crate::error::{CoreError, Result};
use crate::hashing::{sha256, Digest32};
use crate::model::{embed_plan_rows, hidden_states, write_checkpoint, ModelBundle, Projection};
use crate::tokenizer::{assemble_prompt, Layout, PromptPlan, Vocabulary};

/// Per-residue sum of sequence and structure embeddings.
pub fn joint_fuse<T: Real>(e_s: &Tensor<T>, e_x: &Tensor<T>) -> Result<Tensor<T>> {
    if e_s.shape() != e_x.shape() {
        return Err(CoreError::ResidueAlignment {
            what: "structure embeddings",
            got: e_x.shape().first().copied().unwrap_or(0),
            expected: e_s.shape().first().copied().unwrap_or(0),
        });
    }
    let data = e_s.data().iter().zip(e_x.data()).map(|(&a, &b)| a + b).collect();
    Ok(Tensor::new(e_s.shape().to_vec(), data)?)
}

/// Token counts of the demonstration a compressed entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceLengths {
    pub question: usize,
    pub protein: usize,
    pub answer: usize,
}

/// Raw last-`x` hidden states of one demonstration, before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDemo {
    pub id: String,
    pub raw: Tensor<f32>,
    pub key: Vec<f32>,
    pub lengths: SourceLengths,
    /// Length of the assembled demonstration prompt.
    pub prompt_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedDemo {
    pub id: String,
    /// Projected vectors `[x × d]`.
    pub vectors: Tensor<f32>,
    /// Mean of the raw vectors; independent of the projection.
    pub key: Vec<f32>,
    pub lengths: SourceLengths,
}

impl RawDemo {
    pub fn project(&self, projection: &Projection<f32>) -> Result<CompressedDemo> {
        Ok(CompressedDemo {
            id: self.id.clone(),
            vectors: projection.apply(&self.raw)?,
            key: self.key.clone(),
            lengths: self.lengths,
        })
    }
}

/// The joint-layout prompt of a full demonstration, answer and `<EOS>`
/// included.
pub fn demo_plan(rec: &EncodedRecord, vocab: &Vocabulary, max_context: usize) -> Result<PromptPlan> {
    assemble_prompt(
        vocab,
        &rec.question,
        &rec.t_s,
        &rec.t_x,
        Layout::Joint,
        Some(&rec.answer),
        max_context,
    )
}

/// Arithmetic mean of the rows of `m`.
pub fn mean_pool(m: &Tensor<f32>) -> Result<Vec<f32>> {
    let (n, d) = m.dims2()?;
    if n == 0 {
        return Err(CoreError::invalid("cannot pool zero rows"));
    }
    let mut acc = vec![0f64; d];
    for r in 0..n {
        for (a, &v) in acc.iter_mut().zip(m.row(r)) {
            *a += v as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

/// Runs the demonstration once and keeps its final `x` hidden states.
pub fn compress_raw(rec: &EncodedRecord, bundle: &ModelBundle<f32>, vocab: &Vocabulary, x: usize) -> Result<RawDemo> {
    let plan = demo_plan(rec, vocab, bundle.config.max_context)?;
    let t = plan.len();
    if x == 0 || x > t {
        return Err(CoreError::invalid(format!("x = {x} must lie in 1..={t}")));
    }
    let rows = embed_plan_rows(bundle, &plan, None, 0)?;
    let hidden = hidden_states(bundle, &rows)?;
    let raw = hidden.slice_rows(t - x, t);
    let key = mean_pool(&raw)?;
    Ok(RawDemo {
        id: rec.id.clone(),
        raw,
        key,
        lengths: SourceLengths {
            question: rec.question.len(),
            protein: rec.t_s.len(),
            answer: rec.answer.len(),
        },
        prompt_len: t,
    })
}

/// Compresses one demonstration and projects it.
pub fn self_compress(rec: &EncodedRecord, bundle: &ModelBundle<f32>, vocab: &Vocabulary, x: usize) -> Result<CompressedDemo> {
    let projection = bundle
        .projection()
        .ok_or_else(|| CoreError::invalid("bundle has no projection layer"))?;
    compress_raw(rec, bundle, vocab, x)?.project(&projection)
}

/// Where a bank's contents came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub checkpoint: Digest32,
    pub dataset: Digest32,
}

impl Provenance {
    pub fn of(bundle: &ModelBundle<f32>, records: &[EncodedRecord]) -> Result<Self> {
        let mut buf = Vec::new();
        write_checkpoint(bundle, &mut buf)?;
        Ok(Self {
            checkpoint: sha256(&buf),
            dataset: dataset_digest(records),
        })
    }
}

/// Hash of encoded records: ids and every token id, in order.
pub fn dataset_digest(records: &[EncodedRecord]) -> Digest32 {
    let mut buf = Vec::new();
    for r in records {
        buf.extend_from_slice(r.id.as_bytes());
        buf.push(0);
        for part in [&r.question, &r.t_s, &r.t_x, &r.answer] {
            buf.extend_from_slice(&(part.len() as u32).to_le_bytes());
            for &t in part.iter() {
                buf.extend_from_slice(&(t as u32).to_le_bytes());
            }
        }
    }
    sha256(&buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoBank {
    pub x: usize,
    pub dim: usize,
    pub entries: Vec<CompressedDemo>,
    pub provenance: Provenance,
}

/// Result of compressing a dataset: entries plus the records that could
/// not be compressed, with reasons.
#[derive(Debug, Clone)]
pub struct BankBuild<D> {
    pub entries: Vec<D>,
    pub skipped: Vec<(String, String)>,
}

/// Raw compression of every record, in dataset order. Records that fail
/// (for example by overflowing the context) are skipped, not fatal.
pub fn build_raw_bank(
    records: &[EncodedRecord],
    bundle: &ModelBundle<f32>,
    vocab: &Vocabulary,
    x: usize,
    threads: usize,
) -> BankBuild<RawDemo> {
    let results = crate::parallel::map(records, threads, |r| compress_raw(r, bundle, vocab, x));
    let mut out = BankBuild {
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(d) => out.entries.push(d),
            Err(e) => out.skipped.push((r.id.clone(), e.to_string())),
        }
    }
    out
}

/// Compresses and projects every record with the bundle's projection.
pub fn build_demo_bank(
    records: &[EncodedRecord],
    bundle: &ModelBundle<f32>,
    vocab: &Vocabulary,
    x: usize,
    threads: usize,
) -> Result<(DemoBank, Vec<(String, String)>)> {
    let projection = bundle
        .projection()
        .ok_or_else(|| CoreError::invalid("bundle has no projection layer"))?;
    let raw = build_raw_bank(records, bundle, vocab, x, threads);
    let bank = DemoBank::from_raw(&raw.entries, &projection, x, Provenance::of(bundle, records)?)?;
    Ok((bank, raw.skipped))
}

/// Row-wise concatenation `[(N·x) × d]` in the given order.
pub fn concat_demos(entries: &[&CompressedDemo]) -> Result<Tensor<f32>> {
    let Some(first) = entries.first() else {
        return Err(CoreError::invalid("no demonstrations to concatenate"));
    };
    let (x, d) = first.vectors.dims2()?;
    let mut data = Vec::with_capacity(entries.len() * x * d);
    for e in entries {
        if e.vectors.shape() != [x, d] {
            return Err(CoreError::invalid(format!(
                "demonstration {} has shape {:?}, expected [{x}, {d}]",
                e.id,
                e.vectors.shape()
            )));
        }
        data.extend_from_slice(e.vectors.data());
    }
    Ok(Tensor::new(vec![entries.len() * x, d], data)?)
}

const BANK_MAGIC: &[u8; 4] = b"PCCB";

impl DemoBank {
    pub fn from_raw(raw: &[RawDemo], projection: &Projection<f32>, x: usize, provenance: Provenance) -> Result<Self> {
        let entries = raw.iter().map(|r| r.project(projection)).collect::<Result<Vec<_>>>()?;
        if let Some(e) = entries.iter().find(|e| e.vectors.rows() != x) {
            return Err(CoreError::invalid(format!("demonstration {} does not have {x} vectors", e.id)));
        }
        Ok(Self {
            x,
            dim: projection.dim(),
            entries,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CompressedDemo> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Binary form, little-endian:
    /// `"PCCB"`, u32 x, u32 count, u32 d, 32-byte checkpoint hash,
    /// 32-byte dataset hash, then per entry: u32 id length, id bytes,
    /// `x·d` projected f32, `d` key f32, three u32 source lengths.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        use crate::model::checkpoint::{put_f32s, put_str, put_u32};
        let mut out = Vec::new();
        out.extend_from_slice(BANK_MAGIC);
        put_u32(&mut out, self.x)?;
        put_u32(&mut out, self.entries.len())?;
        put_u32(&mut out, self.dim)?;
        out.extend_from_slice(&self.provenance.checkpoint);
        out.extend_from_slice(&self.provenance.dataset);
        for e in &self.entries {
            put_str(&mut out, &e.id)?;
            put_f32s(&mut out, e.vectors.data());
            put_f32s(&mut out, &e.key);
            for l in [e.lengths.question, e.lengths.protein, e.lengths.answer] {
                put_u32(&mut out, l)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = crate::model::checkpoint::Reader::new(buf, "demo bank");
        if r.bytes(4)? != BANK_MAGIC {
            return Err(CoreError::Format {
                kind: "demo bank",
                message: "bad magic".into(),
            });
        }
        let x = r.u32()?;
        let count = r.u32()?;
        let dim = r.u32()?;
        let mut checkpoint = [0u8; 32];
        checkpoint.copy_from_slice(r.bytes(32)?);
        let mut dataset = [0u8; 32];
        dataset.copy_from_slice(r.bytes(32)?);
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.str()?;
            let vectors = Tensor::new(vec![x, dim], r.f32s(x * dim)?)?;
            let key = r.f32s(dim)?;
            let lengths = SourceLengths {
                question: r.u32()?,
                protein: r.u32()?,
                answer: r.u32()?,
            };
            entries.push(CompressedDemo {
                id,
                vectors,
                key,
                lengths,
            });
        }
        r.finish()?;
        Ok(Self {
            x,
            dim,
            entries,
            provenance: Provenance { checkpoint, dataset },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_arithmetic() {
        let s = Tensor::new(vec![1, 2], vec![1.0f64, 2.0]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(joint_fuse(&s, &x).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(joint_fuse(&s, &x).unwrap(), joint_fuse(&x, &s).unwrap());
        let z = Tensor::zeros(&[1, 2]);
        assert_eq!(joint_fuse(&s, &z).unwrap(), s);
    }

    #[test]
    fn fuse_rejects_misalignment() {
        let s = Tensor::<f32>::zeros(&[2, 2]);
        let x = Tensor::<f32>::zeros(&[3, 2]);
        assert!(matches!(joint_fuse(&s, &x), Err(CoreError::ResidueAlignment { .. })));
    }

    fn demo(id: &str, x: usize, fill: f32) -> CompressedDemo {
        CompressedDemo {
            id: id.into(),
            vectors: Tensor::filled(&[x, 3], fill),
            key: vec![fill; 3],
            lengths: SourceLengths {
                question: 1,
                protein: 2,
                answer: 3,
            },
        }
    }

    #[test]
    fn concat_orders_rows() {
        let a = demo("a", 16, 1.0);
        let b = demo("b", 16, 2.0);
        let d = concat_demos(&[&a, &b]).unwrap();
        assert_eq!(d.shape(), &[32, 3]);
        assert_eq!(d.row(15), &[1.0; 3]);
        assert_eq!(d.row(16), &[2.0; 3]);
        assert_eq!(concat_demos(&[&a]).unwrap(), a.vectors);
        let many: Vec<CompressedDemo> = (0..16).map(|i| demo(&i.to_string(), 16, i as f32)).collect();
        let refs: Vec<&CompressedDemo> = many.iter().collect();
        assert_eq!(concat_demos(&refs).unwrap().rows(), 256);
    }

    #[test]
    fn concat_rejects_mixed_x() {
        let a = demo("a", 4, 1.0);
        let b = demo("b", 8, 1.0);
        assert!(concat_demos(&[&a, &b]).is_err());
    }

    #[test]
    fn bank_bytes_round_trip() {
        let bank = DemoBank {
            x: 4,
            dim: 3,
            entries: vec![demo("a", 4, 0.5), demo("b", 4, -1.5)],
            provenance: Provenance {
                checkpoint: [7; 32],
                dataset: [9; 32],
            },
        };
        let bytes = bank.to_bytes().unwrap();
        assert_eq!(DemoBank::from_bytes(&bytes).unwrap(), bank);
        assert!(DemoBank::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
