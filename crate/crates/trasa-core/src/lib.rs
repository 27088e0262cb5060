//! Session-based next-item recommendation with transition-relation-aware
//! self-attention.
//!
//! A session of item clicks is turned into a typed directed graph; the
//! shortest typed path between every pair of nodes is encoded by a recurrent
//! network into a relation vector, which biases the attention scores between
//! those nodes. A soft-attention readout over the (position-annotated)
//! sequence view produces the session representation, which is scored against
//! unit-normalized item embeddings.
//!
//! The crate contains the full stack: a small reverse-mode tensor engine,
//! the session graph, the model itself, a data pipeline (ingest, filtering,
//! augmentation, splits, synthetic corpora), training with evaluation and
//! ablations, checkpointing, and finite-difference verification.

pub mod ablation;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
