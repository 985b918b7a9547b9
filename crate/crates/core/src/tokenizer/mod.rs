//! Unified vocabulary, protein encoding, structure quantization and
//! prompt assembly.

mod codebook;
mod prompt;
mod protein;
mod text;
mod vocab;

pub use codebook::{quantize_structure, Codebook, CODEBOOK_SIZE};
pub use prompt::{assemble_prompt, assemble_text_prompt, check_partition, Layout, PromptPlan, Segment, SegmentKind, Slot};
pub use protein::{encode_protein, ProteinRecord, StructureInput};
pub use text::{detokenize, pretokenize};
pub use vocab::{specials, TokenClass, Vocabulary, AMINO_ACIDS};
