//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is a define-by-run Wengert tape: each forward op pushes a node
//! holding its operands, its value, and whatever the backward pass needs.
//! [`Tape::backward`] then walks the nodes in reverse, accumulating gradients
//! for every leaf marked as trainable. Tapes are rebuilt per forward pass.
//!
//! [`adam_step`] and [`lr_schedule`] implement the optimizer side; parameters
//! live in a [`ParamSet`] between steps and enter each tape as leaves.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, lr_schedule, AdamState, ParamSet};
pub use tape::{Gradients, NodeId, Op, Tape};
pub use tensor::Tensor;

