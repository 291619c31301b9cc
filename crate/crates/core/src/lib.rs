//! Desk-scale training and benchmarking for semantic-ID generative
//! recommendation, with in-flight token pruning and a multi-step auxiliary
//! prediction head.
//!
//! The crate is organized bottom-up:
//!
//! - [`kernel`]: f64 tensors, reverse-mode autodiff, fused attention that
//!   materializes its probabilities, allocator instrumentation.
//! - [`quantizer`]: residual k-means over item embeddings -> semantic IDs.
//! - [`corpus`]: synthetic interaction data, CSV ingestion, leave-one-out
//!   splitting, SID serialization, and the valid-code prefix trie.
//! - [`model`]: decoder-only causal transformer with a pruning hook.
//! - [`sap`]: token-importance scoring and order-preserving selection,
//!   plus the baseline pruning strategies it is compared against.
//! - [`map`]: the training-only auxiliary next-step prediction head.
//! - [`trainer`]: seeded Adam training loop with per-step wall-clock and
//!   peak-memory instrumentation.
//! - [`evaluator`]: trie-constrained beam search, ranking metrics, and
//!   efficiency aggregation.

pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod kernel;
pub mod map;
pub mod model;
pub mod quantizer;
pub mod sap;
pub mod trainer;

pub use error::{Error, Result};
