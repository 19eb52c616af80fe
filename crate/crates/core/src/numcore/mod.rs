//! Dense `f64` tensors and tape-based reverse-mode differentiation.

mod kernels;
mod tape;
mod tensor;

pub use kernels::log_softmax_row;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
