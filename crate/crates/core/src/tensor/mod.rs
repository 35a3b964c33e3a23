//! Minimal differentiable computation substrate: dense rank-4 tensors, the
//! operator set the restorers and losses need, reverse-mode gradients, and
//! an Adam optimizer. 32-bit elements are used for training; the same code
//! runs in 64-bit mode for gradient checking.

pub(crate) mod conv;
mod graph;
pub mod io;
mod optim;
mod scalar;
mod shape;
#[allow(clippy::module_inception)]
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{Adam, Parameter};
pub use scalar::Scalar;
pub use shape::Shape;
pub use tensor::Tensor;
