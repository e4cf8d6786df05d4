//! Dense tensors and reverse-mode differentiation.

mod params;
mod tape;
mod tensor;

pub use params::{Gradients, ParamId, ParamValues, ParameterStore};
pub use tape::{log_loss_value, sigmoid, Activation, Axis, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck_tests;
