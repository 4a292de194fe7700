//! Dense tensors, a reverse-mode differentiation tape and the Adam optimizer.
//!
//! Every model equation is composed from the operations on [`Tape`]. The
//! element type is any [`Scalar`]; the rest of the crate uses `f64`.

mod adam;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, DecayMode, ParamStore};
pub use scalar::Scalar;
pub use tape::{BinaryOp, ReduceOp, Tape, UnaryOp, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
