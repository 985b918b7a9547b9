use std::path::PathBuf;

use pcc_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("context overflow: {len} positions exceed max_context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {id} at position {position} is out of range (vocab size {vocab})")]
    TokenOutOfRange {
        position: usize,
        id: usize,
        vocab: usize,
    },
    #[error("unknown amino acid {letter:?} at residue {index}")]
    UnknownResidue { index: usize, letter: char },
    #[error("empty protein")]
    EmptyProtein,
    #[error("residue alignment: {what} has {got} entries, expected {expected}")]
    ResidueAlignment {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid segments: {0}")]
    Segments(String),
    #[error("not enough candidates: requested {requested}, only {available} eligible")]
    NotEnoughCandidates { requested: usize, available: usize },
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("empty query after tokenization")]
    EmptyQuery,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("{skipped} of {total} prompts overflowed the context window")]
    TooManySkipped { skipped: usize, total: usize },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bad {kind} file: {message}")]
    Format { kind: &'static str, message: String },
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }
}
