//! Dense `f32`/`f64` tensors with a define-by-run reverse-mode autodiff tape.
//!
//! The op set covers what convolutional GANs with adaptive instance
//! normalization need: strided convolution, nearest upsampling, pooling,
//! affine maps, pointwise activations, AdaIN and L1/mean reductions.

mod error;
mod gradcheck;
mod graph;
mod init;
mod kernels;
mod optim;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use init::kaiming_normal;
pub use optim::{RmsProp, RmspropState};
pub use real::Real;
pub use tensor::Tensor;
