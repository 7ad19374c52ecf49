//! Video anomaly detection backbone on precomputed clip features.
//!
//! A self-contained CPU stack: tape-based autodiff tensors, decoupled
//! spatial/temporal convolution blocks, linear-time kernel attention with an
//! exact-softmax oracle, the triplet+BCE objective, AdamW with cosine decay,
//! a binary feature-tensor format with synthetic data generation, and the
//! train/eval harness behind the `vad` CLI.

pub mod attention;
pub mod backbone;
pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod real;
pub mod seeding;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::PoolMode;
pub use real::Real;
pub use tensor::Tensor;
