//! Checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PCC1"
//! u32 header length, header bytes (UTF-8 JSON: {"config": .., "lora": ..})
//! u32 tensor count
//! per tensor, in sorted-name order:
//!   u32 name length, name bytes, u32 ndim, ndim × u32 dims, f32 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use pcc_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::bundle::{ModelBundle, ParamStore};
use super::config::ModelConfig;
use super::lora::LoraConfig;
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"PCC1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    lora: Option<LoraConfig>,
}

fn fmt(message: impl Into<String>) -> CoreError {
    CoreError::Format {
        kind: "checkpoint",
        message: message.into(),
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| fmt(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Cursor over an in-memory container.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Self { buf, at: 0, kind }
    }

    fn err(&self, m: String) -> CoreError {
        CoreError::Format {
            kind: self.kind,
            message: m,
        }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(self.err(format!("truncated at byte {} (wanted {n} more)", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub(crate) fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.bytes(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.err("string is not UTF-8".into()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.bytes(n.checked_mul(4).ok_or_else(|| self.err("length overflow".into()))?)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.at)));
        }
        Ok(())
    }
}

/// Serializes `bundle`. Identical bundles give identical bytes.
pub fn write_checkpoint(bundle: &ModelBundle<f32>, w: &mut impl Write) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let header = serde_json::to_string(&Header {
        config: bundle.config.clone(),
        lora: bundle.lora.clone(),
    })?;
    put_str(&mut out, &header)?;
    put_u32(&mut out, bundle.params.len())?;
    for (name, t) in &bundle.params {
        if !t.is_finite() {
            return Err(fmt(format!("tensor {name} holds non-finite values")));
        }
        put_str(&mut out, name)?;
        put_u32(&mut out, t.ndim())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        put_f32s(&mut out, t.data());
    }
    w.write_all(&out).map_err(|e| fmt(e.to_string()))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelBundle<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| fmt(e.to_string()))?;
    let mut rd = Reader::new(&buf, "checkpoint");
    if rd.bytes(4)? != MAGIC {
        return Err(fmt("bad magic"));
    }
    let header: Header = serde_json::from_str(&rd.str()?)?;
    header.config.validate()?;
    let count = rd.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = rd.str()?;
        let ndim = rd.u32()?;
        let shape = (0..ndim).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = rd.f32s(n)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(fmt(format!("tensor {name} holds non-finite values")));
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    rd.finish()?;
    Ok(ModelBundle {
        config: header.config,
        params,
        lora: header.lora,
    })
}

pub fn save_checkpoint(bundle: &ModelBundle<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(bundle, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle<f32>> {
    let mut f = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    read_checkpoint(&mut f)
}
