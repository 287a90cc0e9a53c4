//! Dense tensor arithmetic with reverse-mode gradient accumulation.
//!
//! Everything the model math needs and nothing more: 0/1/2-d f64 tensors,
//! a per-pass operation tape, and analytic backward rules for each op.
//! Non-finite values raise immediately instead of propagating.

mod tape;
mod tensor;

pub use tape::{softmax_data, Tape, Value};
pub use tensor::Tensor;
