//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_many};
pub use tape::{gelu, Gradients, Graph, KeySets, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
