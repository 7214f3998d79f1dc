//! Dense 4-D tensors in (batch, height, width, channels) row-major order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("element count of shape {0} overflows usize")]
    Overflow(Shape),
    #[error("data length {got} does not match shape {shape} ({expected} elements)")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("cannot reduce over an empty spatial extent (shape {0})")]
    EmptyReduction(Shape),
}

/// Tensor extent as (batch, height, width, channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            batch,
            height,
            width,
            channels,
        }
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.channels]
    }

    pub fn from_dims(dims: [usize; 4]) -> Self {
        Self::new(dims[0], dims[1], dims[2], dims[3])
    }

    /// Total element count, or `None` if it does not fit in `usize`.
    pub fn checked_numel(&self) -> Option<usize> {
        self.dims()
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    pub fn numel(&self) -> Result<usize, TensorError> {
        self.checked_numel().ok_or(TensorError::Overflow(*self))
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.height, self.width, self.channels
        )
    }
}

/// Owned dense tensor. The data length always equals the shape's element count.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Result<Self, TensorError> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Result<Self, TensorError> {
        let n = shape.numel()?;
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, TensorError> {
        let expected = shape.numel()?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(b, y, x, c)` at every index.
    pub fn from_fn(
        shape: Shape,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self, TensorError> {
        let n = shape.numel()?;
        let mut data = Vec::with_capacity(n);
        for b in 0..shape.batch {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    for c in 0..shape.channels {
                        data.push(f(b, y, x, c));
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of `(b, y, x, c)`.
    #[inline]
    pub fn offset(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        let s = &self.shape;
        ((b * s.height + y) * s.width + x) * s.channels + c
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.offset(b, y, x, c)]
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Mean over height and width per (batch, channel); output shape (N, 1, 1, C).
    ///
    /// Accumulates in `f64`.
    pub fn reduce_mean_spatial(&self) -> Result<Self, TensorError> {
        let s = self.shape;
        let area = s.height * s.width;
        if area == 0 {
            return Err(TensorError::EmptyReduction(s));
        }
        let mut acc = vec![0.0f64; s.batch * s.channels];
        for b in 0..s.batch {
            let sums = &mut acc[b * s.channels..(b + 1) * s.channels];
            let base = b * area * s.channels;
            for pixel in self.data[base..base + area * s.channels].chunks_exact(s.channels) {
                for (sum, &v) in sums.iter_mut().zip(pixel) {
                    *sum += v.to_f64_lossy();
                }
            }
        }
        let inv = 1.0 / area as f64;
        Ok(Self {
            shape: Shape::new(s.batch, 1, 1, s.channels),
            data: acc.into_iter().map(|v| T::from_f64_lossy(v * inv)).collect(),
        })
    }

    /// True if every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Tensor<f32> {
    /// Bit-level equality (distinguishes `-0.0` from `0.0`).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Free-function form of [`Tensor::zeros`].
pub fn zeros<T: Scalar>(shape: Shape) -> Result<Tensor<T>, TensorError> {
    Tensor::zeros(shape)
}

/// Free-function form of [`Tensor::map`].
pub fn map_elementwise<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    t.map(f)
}

/// Free-function form of [`Tensor::reduce_mean_spatial`].
pub fn reduce_mean_spatial<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    t.reduce_mean_spatial()
}
