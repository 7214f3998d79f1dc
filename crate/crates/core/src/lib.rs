//! Lightweight depthwise-separable CNN engine for banknote denomination recognition.
//!
//! - [`tensor`]: dense NHWC tensors generic over the scalar type.
//! - [`nnops`]: convolution kernels, activations, softmax/cross-entropy, the dense head,
//!   and MAC/parameter accounting.
//! - [`model`]: architecture builder, seeded backbone, forward pass, and the bundle file.
//! - [`data`]: directory-per-class datasets, deterministic splits, preprocessing, and a
//!   synthetic dataset generator.
//! - [`train`]: embedding extraction, head training, evaluation, and batch-size sweeps.
//!
//! Kernels are generic over [`Scalar`] (`f32` and `f64`); the model, data and training
//! layers work in `f32`. Use the aliases below for the concrete types.

pub mod data;
pub mod nnops;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use scalar::Scalar;
pub use tensor::{Shape, Tensor, TensorError};

/// Storage and inference precision.
pub type TensorF32 = Tensor<f32>;
/// Reference precision.
pub type TensorF64 = Tensor<f64>;
pub type DenseF32 = nnops::Dense<f32>;
pub type DenseF64 = nnops::Dense<f64>;
