//! Dense tensors with reverse-mode gradients, forward-mode Jacobian-vector
//! products and an explicit stop-gradient.

mod backend;
mod forward;
mod graph;
pub mod ops;
mod tensor;

pub use backend::{Backend, Eval};
pub use forward::{jvp, jvp_joint, DualTensor, Forward, JointPoint, JointTangent};
pub use graph::{Graph, Trainable, Var};
pub use ops::{Binary, Unary};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
