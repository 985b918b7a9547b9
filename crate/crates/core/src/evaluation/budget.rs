use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Prompt length with and without demonstration compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub n: usize,
    pub x: usize,
    pub query_len: f64,
    pub uncompressed: f64,
    pub compressed: f64,
    /// `1 - compressed / uncompressed`.
    pub ratio: f64,
    /// Positions each demonstration occupies once compressed.
    pub per_demo_compressed: usize,
}

/// Budget for one configuration. `demo_lengths` holds the full token
/// length of each of the N demonstrations.
pub fn budget_report(demo_lengths: &[f64], query_len: f64, x: usize) -> Result<BudgetRow> {
    if x == 0 {
        return Err(CoreError::invalid("x must be positive"));
    }
    if query_len < 0.0 || demo_lengths.iter().any(|&l| l <= 0.0) {
        return Err(CoreError::invalid("lengths must be positive"));
    }
    let n = demo_lengths.len();
    let uncompressed = demo_lengths.iter().sum::<f64>() + query_len;
    let compressed = (n * x) as f64 + query_len;
    if uncompressed <= 0.0 {
        return Err(CoreError::invalid("empty prompt"));
    }
    Ok(BudgetRow {
        n,
        x,
        query_len,
        uncompressed,
        compressed,
        ratio: 1.0 - compressed / uncompressed,
        per_demo_compressed: x,
    })
}

/// Query length `Q` for which N demos of mean length `mean_len`,
/// compressed to `x` each, reach compression ratio `ratio`:
/// `1 - (N·x + Q) / (N·mean_len + Q) = ratio`.
pub fn solve_query_length(ratio: f64, n: usize, x: usize, mean_len: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(CoreError::invalid("ratio must lie in (0, 1)"));
    }
    let q = ((1.0 - ratio) * n as f64 * mean_len - (n * x) as f64) / ratio;
    if q < 0.0 {
        return Err(CoreError::invalid("no non-negative query length reaches that ratio"));
    }
    Ok(q)
}
