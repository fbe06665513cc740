//! Dense row-major tensors with a tape-based reverse-mode differentiator.
//!
//! A [`Graph`] records every op applied to its nodes; [`Graph::backward`]
//! sweeps the tape once in reverse and accumulates gradients into every
//! node that requires them. Element types are `f32` for training and `f64`
//! for [`gradcheck`].

mod error;
pub mod fixtures;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod nn;
mod ops;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use graph::{Graph, Var};
pub use ops::{BinaryKind, CustomRule, UnaryKind};
pub use real::Real;
pub use tensor::Tensor;

/// Output length of an unpadded strided convolution, `None` if the kernel
/// does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (kernel >= 1 && stride >= 1 && kernel <= len).then(|| (len - kernel) / stride + 1)
}

/// Output length of a transposed convolution.
pub fn conv_transpose_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len.max(1) - 1) * stride + kernel
}
