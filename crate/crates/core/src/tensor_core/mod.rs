//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.

mod check;
mod graph;
mod optim;
mod tensor;

pub use check::{gradient_check, LossFn, FD_STEP};
pub use graph::{Gradients, Graph, Var, NORM_EPS};
pub use optim::{Adam, Sgd};
pub use tensor::{argmax, Tensor};
