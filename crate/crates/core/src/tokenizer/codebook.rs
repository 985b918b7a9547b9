use std::path::Path;

use pcc_tensor::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of structure codes.
pub const CODEBOOK_SIZE: usize = 512;

/// Structure code vectors, stored row-major `[CODEBOOK_SIZE × dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    codes: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    dim: usize,
    codes: Vec<Vec<f32>>,
}

impl Codebook {
    pub fn new(dim: usize, rows: Vec<Vec<f32>>) -> Result<Self> {
        let fmt = |m: String| CoreError::Format {
            kind: "codebook",
            message: m,
        };
        if rows.len() != CODEBOOK_SIZE {
            return Err(fmt(format!("expected {CODEBOOK_SIZE} codes, got {}", rows.len())));
        }
        if dim == 0 {
            return Err(fmt("dim must be positive".into()));
        }
        let mut codes = Vec::with_capacity(dim * CODEBOOK_SIZE);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != dim {
                return Err(fmt(format!("code {i} has {} values, expected {dim}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(fmt(format!("code {i} is not finite")));
            }
            codes.extend(r);
        }
        Ok(Self { dim, codes })
    }

    /// Standard-normal codes.
    pub fn random(dim: usize, rng: &mut SplitMix64) -> Self {
        let codes = (0..dim * CODEBOOK_SIZE).map(|_| rng.normal() as f32).collect();
        Self { dim, codes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn code(&self, j: usize) -> &[f32] {
        &self.codes[j * self.dim..(j + 1) * self.dim]
    }

    /// Index of the nearest code by squared Euclidean distance; the lowest
    /// index wins ties.
    pub fn nearest(&self, feature: &[f32]) -> Result<usize> {
        if feature.len() != self.dim {
            return Err(CoreError::Dimension {
                what: "structure feature",
                expected: self.dim,
                got: feature.len(),
            });
        }
        let mut best = (f64::INFINITY, 0);
        for j in 0..CODEBOOK_SIZE {
            let d: f64 = self
                .code(j)
                .iter()
                .zip(feature)
                .map(|(&c, &f)| {
                    let diff = f as f64 - c as f64;
                    diff * diff
                })
                .sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        Ok(best.1)
    }

    pub fn to_json(&self) -> Result<String> {
        let codes = (0..CODEBOOK_SIZE).map(|j| self.code(j).to_vec()).collect();
        Ok(serde_json::to_string(&CodebookFile { dim: self.dim, codes })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(text)?;
        Self::new(file.dim, file.codes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Code index per residue feature row.
pub fn quantize_structure(features: &[Vec<f32>], codebook: &Codebook) -> Result<Vec<usize>> {
    features.iter().map(|f| codebook.nearest(f)).collect()
}
