//! Dense `f32` tensors and a define-by-run reverse-mode tape.
//!
//! Parameters live in [`Tensor`]s owned by the model. A fresh [`Tape`] is
//! built for every forward pass; parameters are registered with
//! [`Tape::leaf`], which shares their buffers, and after
//! [`Tape::backward`] the gradients are copied back with
//! [`Tape::write_grads`].

mod kernels;
mod tape;
mod tensor;

pub use tape::{BinaryOp, Tape, UnaryOp, Var};
pub use tensor::Tensor;

