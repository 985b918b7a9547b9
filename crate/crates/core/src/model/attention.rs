use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tokenizer::check_partition;

/// Causal attention weights for every layer and head of one forward pass.
///
/// Each layer is stored flattened by query row: row `i` holds
/// `heads × (i + 1)` weights, head-major. Weights on future positions are
/// implicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub len: usize,
    pub heads: usize,
    pub layers: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn offset(&self, i: usize) -> usize {
        self.heads * i * (i + 1) / 2
    }

    /// Weights of query row `i` over keys `0..=i`.
    pub fn causal_row(&self, layer: usize, head: usize, i: usize) -> &[f64] {
        let start = self.offset(i) + head * (i + 1);
        &self.layers[layer][start..start + i + 1]
    }

    /// Full row `i` of the `[len × len]` matrix, zeros past the diagonal.
    pub fn row(&self, layer: usize, head: usize, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        out[..=i].copy_from_slice(self.causal_row(layer, head, i));
        out
    }

    pub fn weight(&self, layer: usize, head: usize, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.causal_row(layer, head, i)[j]
        }
    }
}

/// One row of the attention report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentShare {
    pub label: String,
    /// Attention mass a query row sends into the segment, averaged over
    /// last-layer heads and all query rows.
    pub avg_score: f64,
    pub percentage: f64,
}

/// Attention into each segment from the last layer. Segments must
/// partition `0..record.len`.
pub fn attention_summary(record: &AttentionRecord, segments: &[(String, Range<usize>)]) -> Result<Vec<SegmentShare>> {
    let ranges: Vec<Range<usize>> = segments.iter().map(|(_, r)| r.clone()).collect();
    check_partition(&ranges, record.len)?;
    if record.len == 0 || record.layers.is_empty() {
        return Err(CoreError::invalid("attention record is empty"));
    }
    let last = record.n_layers() - 1;
    let mut mass = vec![0.0; segments.len()];
    for h in 0..record.heads {
        for i in 0..record.len {
            let row = record.causal_row(last, h, i);
            for (m, r) in mass.iter_mut().zip(&ranges) {
                let end = r.end.min(i + 1);
                if r.start < end {
                    *m += row[r.start..end].iter().sum::<f64>();
                }
            }
        }
    }
    let denom = (record.heads * record.len) as f64;
    let total: f64 = mass.iter().sum();
    Ok(segments
        .iter()
        .zip(mass)
        .map(|((label, _), m)| SegmentShare {
            label: label.clone(),
            avg_score: m / denom,
            percentage: if total > 0.0 { 100.0 * m / total } else { 0.0 },
        })
        .collect())
}
