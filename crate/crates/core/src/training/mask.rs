use crate::error::{CoreError, Result};
use crate::tokenizer::{PromptPlan, SegmentKind};

/// Supervision mask over next-token targets: entry `t` (predicting slot
/// `t + 1`) is true exactly when slot `t + 1` lies in the answer segment.
/// The result has `len - 1` entries.
pub fn answer_mask(plan: &PromptPlan) -> Result<Vec<bool>> {
    let answer = plan
        .segment(SegmentKind::Answer)
        .ok_or_else(|| CoreError::invalid("prompt has no answer segment"))?;
    if answer.is_empty() {
        return Err(CoreError::invalid("empty answer"));
    }
    if answer.start == 0 {
        return Err(CoreError::invalid("answer cannot start the prompt"));
    }
    Ok((1..plan.len()).map(|p| answer.contains(&p)).collect())
}
