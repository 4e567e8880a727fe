//! Dense tensors, a reverse-mode tape, and a finite-difference oracle.

mod gradcheck;
mod graph;
pub mod interchange;
mod kernels;
mod tensor;

pub use gradcheck::{finite_diff_grad_check, grad_check_many, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var, IGNORE_INDEX, NORM_FLOOR};
pub use kernels::UpsampleMode;
pub use tensor::{argmax, topk_indices, Tensor};

#[cfg(test)]
mod tests;
