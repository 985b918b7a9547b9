//! Minimal dense tensor library with a reverse-mode tape.
//!
//! Everything is generic over [`Real`] so the same model code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.
//! Reductions always run in a fixed sequential order, so results are
//! bitwise reproducible for a given build.

pub mod error;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use real::Real;
pub use rng::SplitMix64;
pub use tensor::Tensor;
