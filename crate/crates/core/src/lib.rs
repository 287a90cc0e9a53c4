//! Hybrid sequence/AST code summarization with actor-critic training.
//!
//! The model encodes a code snippet twice — a sequential LSTM over its
//! tokens and a binary-tree LSTM over its syntax tree — and decodes a
//! natural-language comment through a hybrid attention layer. Training
//! runs in three phases: cross-entropy pretraining of the generator,
//! mean-square pretraining of a value head, then joint policy-gradient
//! updates driven by a terminal sentence-BLEU reward. A metric suite
//! (BLEU, METEOR, ROUGE-L, CIDEr) scores held-out decodes.

pub mod ast;
pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod toy;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
