//! Minimal dense tensors with reverse-mode automatic differentiation.

mod error;
mod float;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod ops;
#[allow(clippy::module_inception)]
mod tensor;

pub use error::{Result, TensorError};
pub use float::{Float, Precision};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, ParamGrad, ParamId, Var, BCE_CLAMP, PAD};
pub use ops::{bce_loss, gather_rows, matmul, rms_norm, softmax_rows, topk_rows, transpose};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
