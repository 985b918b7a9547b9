use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::{specials, Vocabulary};
use crate::error::{CoreError, Result};

/// One position of an assembled prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Ordinary token looked up in the embedding table.
    Token(usize),
    /// Sum of a residue's sequence and structure token embeddings.
    Fused { seq: usize, structure: usize },
    /// Row `i` of an externally supplied matrix (a compressed demonstration).
    Vector(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Demos,
    TextBefore,
    Protein,
    TextAfter,
    Answer,
}

impl SegmentKind {
    pub fn label(self) -> &'static str {
        match self {
            SegmentKind::Demos => "demonstrations",
            SegmentKind::TextBefore => "text before protein",
            SegmentKind::Protein => "protein",
            SegmentKind::TextAfter => "text after protein",
            SegmentKind::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub range: Range<usize>,
}

/// How protein tokens enter the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `<PROT_S> t_s </PROT_S> <PROT_X> t_x </PROT_X>`: `2·N + 4` positions.
    Separate,
    /// `<PROT_S> fused×N </PROT_S>`: `N + 2` positions.
    Joint,
}

/// An assembled prompt: the slot sequence plus labelled, contiguous
/// segments that partition `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptPlan {
    pub slots: Vec<Slot>,
    pub segments: Vec<Segment>,
}

impl PromptPlan {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<Range<usize>> {
        self.segments.iter().find(|s| s.kind == kind).map(|s| s.range.clone())
    }

    /// Number of `Vector` slots the plan expects to be filled.
    pub fn vector_count(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Vector(_))).count()
    }

    fn push_segment(&mut self, kind: SegmentKind, slots: impl IntoIterator<Item = Slot>) {
        let start = self.slots.len();
        self.slots.extend(slots);
        self.segments.push(Segment {
            kind,
            range: start..self.slots.len(),
        });
    }

    /// `n` vector slots placed in front of an existing plan; every other
    /// segment shifts right by `n`.
    pub fn with_demo_prefix(&self, n: usize) -> PromptPlan {
        if n == 0 {
            return self.clone();
        }
        let mut out = PromptPlan::default();
        out.push_segment(SegmentKind::Demos, (0..n).map(Slot::Vector));
        out.slots.extend(self.slots.iter().copied());
        out.segments.extend(self.segments.iter().map(|s| Segment {
            kind: s.kind,
            range: s.range.start + n..s.range.end + n,
        }));
        out
    }

    /// Checks that segments are contiguous and cover `0..len()` exactly.
    pub fn check_partition(&self) -> Result<()> {
        check_partition(
            &self.segments.iter().map(|s| s.range.clone()).collect::<Vec<_>>(),
            self.len(),
        )
    }

    /// Next-token targets: `targets[t]` is the token at slot `t + 1`
    /// (0 where that slot is not a plain token).
    pub fn next_token_targets(&self) -> Vec<usize> {
        self.slots
            .iter()
            .skip(1)
            .map(|s| match s {
                Slot::Token(id) => *id,
                _ => 0,
            })
            .collect()
    }
}

/// Errors unless `ranges` tile `0..len` in order with no gaps or overlaps.
pub fn check_partition(ranges: &[Range<usize>], len: usize) -> Result<()> {
    let mut at = 0;
    for r in ranges {
        if r.start != at {
            return Err(CoreError::Segments(format!(
                "segment {}..{} starts at {} but previous ended at {at}",
                r.start, r.end, r.start
            )));
        }
        if r.end < r.start {
            return Err(CoreError::Segments(format!("segment {}..{} is reversed", r.start, r.end)));
        }
        at = r.end;
    }
    if at != len {
        return Err(CoreError::Segments(format!("segments cover 0..{at}, expected 0..{len}")));
    }
    Ok(())
}

/// Assembles `[BOS] q <protein span> q <SEP> [answer <EOS>]`.
///
/// The question appears before and after the protein span. The leading
/// `<BOS>` belongs to the text-before segment; `<SEP>` to text-after.
pub fn assemble_prompt(
    vocab: &Vocabulary,
    question: &[usize],
    t_s: &[usize],
    t_x: &[usize],
    layout: Layout,
    answer: Option<&[usize]>,
    max_context: usize,
) -> Result<PromptPlan> {
    if question.is_empty() {
        return Err(CoreError::invalid("empty question"));
    }
    if t_s.is_empty() {
        return Err(CoreError::EmptyProtein);
    }
    if t_s.len() != t_x.len() {
        return Err(CoreError::ResidueAlignment {
            what: "sequence and structure tokens",
            got: t_x.len(),
            expected: t_s.len(),
        });
    }
    let id = |tok: &str| vocab.special(tok);
    let mut plan = PromptPlan::default();
    plan.push_segment(
        SegmentKind::TextBefore,
        std::iter::once(id(specials::BOS)).chain(question.iter().copied()).map(Slot::Token),
    );
    let protein: Vec<Slot> = match layout {
        Layout::Separate => {
            let mut v = Vec::with_capacity(2 * t_s.len() + 4);
            v.push(Slot::Token(id(specials::PROT_S)));
            v.extend(t_s.iter().map(|&t| Slot::Token(t)));
            v.push(Slot::Token(id(specials::PROT_S_END)));
            v.push(Slot::Token(id(specials::PROT_X)));
            v.extend(t_x.iter().map(|&t| Slot::Token(t)));
            v.push(Slot::Token(id(specials::PROT_X_END)));
            v
        }
        Layout::Joint => {
            let mut v = Vec::with_capacity(t_s.len() + 2);
            v.push(Slot::Token(id(specials::PROT_S)));
            v.extend(t_s.iter().zip(t_x).map(|(&seq, &structure)| Slot::Fused { seq, structure }));
            v.push(Slot::Token(id(specials::PROT_S_END)));
            v
        }
    };
    plan.push_segment(SegmentKind::Protein, protein);
    plan.push_segment(
        SegmentKind::TextAfter,
        question
            .iter()
            .copied()
            .chain(std::iter::once(id(specials::SEP)))
            .map(Slot::Token),
    );
    if let Some(answer) = answer {
        if answer.is_empty() {
            return Err(CoreError::invalid("empty answer"));
        }
        plan.push_segment(
            SegmentKind::Answer,
            answer
                .iter()
                .copied()
                .chain(std::iter::once(id(specials::EOS)))
                .map(Slot::Token),
        );
    }
    if plan.len() > max_context {
        return Err(CoreError::ContextOverflow {
            len: plan.len(),
            max: max_context,
        });
    }
    Ok(plan)
}

/// The joint layout with zero residues: `[BOS] q <PROT_S> </PROT_S> q <SEP>
/// answer <EOS>`. Used to train the text backbone on the same framing the
/// protein prompts use.
pub fn assemble_text_prompt(
    vocab: &Vocabulary,
    question: &[usize],
    answer: &[usize],
    max_context: usize,
) -> Result<PromptPlan> {
    if question.is_empty() || answer.is_empty() {
        return Err(CoreError::invalid("empty question or answer"));
    }
    let id = |tok: &str| vocab.special(tok);
    let mut plan = PromptPlan::default();
    plan.push_segment(
        SegmentKind::TextBefore,
        std::iter::once(id(specials::BOS)).chain(question.iter().copied()).map(Slot::Token),
    );
    plan.push_segment(
        SegmentKind::Protein,
        [id(specials::PROT_S), id(specials::PROT_S_END)].map(Slot::Token),
    );
    plan.push_segment(
        SegmentKind::TextAfter,
        question
            .iter()
            .copied()
            .chain(std::iter::once(id(specials::SEP)))
            .map(Slot::Token),
    );
    plan.push_segment(
        SegmentKind::Answer,
        answer
            .iter()
            .copied()
            .chain(std::iter::once(id(specials::EOS)))
            .map(Slot::Token),
    );
    if plan.len() > max_context {
        return Err(CoreError::ContextOverflow {
            len: plan.len(),
            max: max_context,
        });
    }
    Ok(plan)
}
