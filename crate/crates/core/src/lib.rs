//! Retrieval-augmented language modeling over a black-box LM.
//!
//! A dense dual encoder retrieves documents from a vector index; each
//! retrieved document is prepended to the input and the per-document LM
//! outputs are mixed by similarity-softmax weights. The retriever can be
//! trained from LM feedback alone by matching its retrieval distribution to
//! the LM's document-usefulness distribution under KL divergence.
//!
//! The numeric core is generic over [`numeric::Scalar`] (`f32`/`f64`); the
//! aliases below fix it to `f64`, the precision the training and evaluation
//! code runs at.

// `!(x > 0.0)` style checks are kept so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod encoder;
pub mod engine;
pub mod ensemble;
pub mod eval;
pub mod harness;
pub mod index;
pub mod lm;
pub mod lsr;
pub mod numeric;
pub mod parallel;
pub mod stub;
pub mod tokenizer;
pub mod transport;

pub use numeric::Scalar;
pub use tokenizer::{TokenId, Tokenizer};

pub type Embedding = encoder::Embedding<f64>;
pub type EncoderParams = encoder::EncoderParams<f64>;
pub type IndexSnapshot = index::IndexSnapshot<f64>;
pub type VectorIndex = index::VectorIndex<f64>;
pub type ScoredDocument = index::ScoredDocument<f64>;
