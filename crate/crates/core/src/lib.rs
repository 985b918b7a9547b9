//! Two-stage prompt compression for multimodal protein question answering.
//!
//! Proteins enter a small decoder-only transformer as one fused embedding per
//! residue (sequence embedding + structure-code embedding). Whole worked
//! demonstrations are then squeezed into the final hidden states of their
//! last `x` positions, passed through a single trainable projection, and
//! concatenated in front of a query for retrieval-augmented N-shot
//! in-context answering.
//!
//! Module map:
//! - [`model`]: transformer, LoRA, checkpoints, attention summaries
//! - [`tokenizer`]: unified vocabulary, VQ structure codes, prompt layouts
//! - [`compression`]: residue fusion, self-compression, demo banks
//! - [`retrieval`]: dense cosine, BM25 and random demo selection
//! - [`training`]: backbone pretraining, stage 1 (LoRA) and stage 2 (projection)
//! - [`inference`]: greedy decoding and the ICL pipeline
//! - [`evaluation`]: EMJI, BLEU, ROUGE, budgets, sweeps
//! - [`dataset`]: seeded synthetic corpus and its JSONL format

pub mod compression;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod hashing;
pub mod inference;
pub mod model;
pub mod parallel;
pub mod retrieval;
pub mod tokenizer;
pub mod training;

pub use error::{CoreError, Result};
pub use pcc_tensor as tensor;
