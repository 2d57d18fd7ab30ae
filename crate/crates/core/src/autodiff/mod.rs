//! Minimal reverse-mode automatic differentiation over dense tensors.

mod activation;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use activation::Activation;
pub use gradcheck::{gradcheck, GRADCHECK_STEP};
pub use optim::{sgd_step, Adam, Optimizer, Sgd};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
