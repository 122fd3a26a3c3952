//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Everything trainable in the crate — the graph autoencoder and the
//! recurrent forecaster — builds its forward pass on a [`Graph`] tape and
//! reads gradients back after [`Graph::backward`].

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{finite_difference_grads, grad_check, max_rel_error};
pub use graph::{sigmoid_scalar, softplus_scalar, Graph, NodeId};
pub use matrix::DenseMatrix;
