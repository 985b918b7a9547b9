//! Decoder-only causal transformer: weights, LoRA, the training tape path,
//! the cached no-grad path, attention summaries and checkpoints.

mod attention;
mod bundle;
pub(crate) mod checkpoint;
mod config;
mod lora;
mod session;
mod tape;

pub use attention::{attention_summary, AttentionRecord, SegmentShare};
pub use bundle::{names, ModelBundle, ParamStore, Projection};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use lora::{apply_lora, LoraAdapter, LoraConfig, LoraMode};
pub use session::{embed_plan_rows, embed_tokens, forward_embeddings, forward_tokens, hidden_states, ForwardOutput, Session};
pub use tape::{bind, BoundParams, TapeModel};
