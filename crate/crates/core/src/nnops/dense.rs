use super::OpError;
use crate::scalar::Scalar;

/// Fully connected layer `out = Wᵀx + b` with `W` stored row-major as `in_dim × out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

/// Gradients of a scalar loss with respect to a [`Dense`] layer's parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub input: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self, OpError> {
        if weights.len() != in_dim * out_dim {
            return Err(OpError::LengthMismatch {
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(OpError::LengthMismatch {
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> T {
        self.weights[row * self.out_dim + col]
    }

    fn check_input(&self, input: &[T]) -> Result<(), OpError> {
        if input.len() != self.in_dim {
            return Err(OpError::LengthMismatch {
                expected: self.in_dim,
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, OpError> {
        self.check_input(input)?;
        let mut out = self.bias.clone();
        if self.out_dim == 0 {
            return Ok(out);
        }
        for (&x, row) in input.iter().zip(self.weights.chunks_exact(self.out_dim)) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        Ok(out)
    }

    /// Exact gradients given `grad_out = ∂L/∂out`.
    pub fn backward(&self, input: &[T], grad_out: &[T]) -> Result<DenseGrads<T>, OpError> {
        self.check_input(input)?;
        if grad_out.len() != self.out_dim {
            return Err(OpError::LengthMismatch {
                expected: self.out_dim,
                got: grad_out.len(),
            });
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        for &x in input {
            weights.extend(grad_out.iter().map(|&g| x * g));
        }
        let input_grad = if self.out_dim == 0 {
            vec![T::zero(); self.in_dim]
        } else {
            self.weights
                .chunks_exact(self.out_dim)
                .map(|row| row.iter().zip(grad_out).fold(T::zero(), |acc, (&w, &g)| acc + w * g))
                .collect()
        };
        Ok(DenseGrads {
            weights,
            bias: grad_out.to_vec(),
            input: input_grad,
        })
    }

    /// Swaps output columns so that new column `j` is old column `perm[j]`.
    pub fn permute_outputs(&self, perm: &[usize]) -> Result<Self, OpError> {
        if perm.len() != self.out_dim {
            return Err(OpError::LengthMismatch {
                expected: self.out_dim,
                got: perm.len(),
            });
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        for row in self.weights.chunks_exact(self.out_dim.max(1)) {
            weights.extend(perm.iter().map(|&p| row[p]));
        }
        let bias = perm.iter().map(|&p| self.bias[p]).collect();
        Self::new(self.in_dim, self.out_dim, weights, bias)
    }
}
