//! Network kernels: convolutions, activations, pooling, softmax/cross-entropy,
//! the dense head, and MAC/parameter accounting.
//!
//! Every kernel is a pure function that allocates its output. Reductions run in a
//! fixed order, so results are reproducible bit-for-bit for identical inputs.

mod conv;
mod cost;
mod dense;
mod loss;
pub mod reference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorError};

pub use conv::{conv2d_depthwise, conv2d_pointwise, conv2d_standard, ConvParams, Padding};
pub use cost::{count_costs, CostReport, LayerCost};
pub use dense::{Dense, DenseGrads};
pub use loss::{cross_entropy, cross_entropy_grad, softmax, CE_EPSILON};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid convolution parameters {0:?}")]
    InvalidParams(ConvParams),
    #[error("expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("weight shape {got} does not match expected {expected}")]
    WeightShape { expected: Shape, got: Shape },
    #[error("convolution {params:?} on input {input} yields an empty output")]
    EmptyOutput { input: Shape, params: ConvParams },
    #[error("expected vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("softmax over zero classes")]
    EmptyLogits,
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
}

/// Nonlinearity applied after each normalization layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `min(max(x, 0), 6)`.
    #[default]
    Relu6,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply_scalar<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        match self {
            Activation::Relu6 => {
                let six = T::from_f64_lossy(6.0);
                x.max(zero).min(six)
            }
            Activation::Relu => x.max(zero),
        }
    }

    pub fn apply<T: Scalar>(self, input: &Tensor<T>) -> Tensor<T> {
        input.map(|x| self.apply_scalar(x))
    }
}

pub fn relu6<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Activation::Relu6.apply(input)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Activation::Relu.apply(input)
}

/// Per-channel affine map `out[..., c] = in[..., c] · scale[c] + bias[c]`
/// (batch normalization folded for inference).
pub fn scale_bias<T: Scalar>(input: &Tensor<T>, scale: &[T], bias: &[T]) -> Result<Tensor<T>, OpError> {
    let c = input.shape().channels;
    for len in [scale.len(), bias.len()] {
        if len != c {
            return Err(OpError::LengthMismatch {
                expected: c,
                got: len,
            });
        }
    }
    let mut out = input.clone();
    if c == 0 {
        return Ok(out);
    }
    for px in out.data_mut().chunks_exact_mut(c) {
        for ((v, &s), &b) in px.iter_mut().zip(scale).zip(bias) {
            *v = *v * s + b;
        }
    }
    Ok(out)
}

/// Spatial mean per channel, shape `(N, 1, 1, C)`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, OpError> {
    Ok(input.reduce_mean_spatial()?)
}

/// Index of the largest value; ties resolve to the lowest index.
// `!(v > b)` rather than `v <= b` so a NaN never displaces the current best.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
