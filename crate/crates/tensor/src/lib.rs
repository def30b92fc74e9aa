//! Tensors, reverse-mode differentiation, layers and optimizers used by the
//! object-centric models.
//!
//! Everything is generic over [`Scalar`], so the same network code runs in
//! `f32` for training and in `f64` for finite-difference checks.

mod graph;
mod kernels;
pub mod nn;
pub mod optim;
mod scalar;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use kernels::ConvGeom;
pub use scalar::Scalar;
pub use tensor::{broadcast_shape, broadcast_to, numel, strides, sum_to_shape, zip_broadcast, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
