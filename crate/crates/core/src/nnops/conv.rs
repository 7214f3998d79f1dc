use serde::{Deserialize, Serialize};

use super::OpError;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output side `ceil(in / stride)`; zeros padded symmetrically, odd remainder bottom/right.
    Same,
    /// No padding; output side `floor((in - k) / stride) + 1`.
    Valid,
}

/// Geometry of one convolution layer.
///
/// For depthwise use `out_channels` is ignored; the output has `in_channels` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvParams {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvParams {
    pub fn new(
        kernel_size: usize,
        stride: usize,
        padding: Padding,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        Self {
            kernel_size,
            stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(1, 1, Padding::Same, in_channels, out_channels)
    }

    pub fn validate(&self) -> Result<(), OpError> {
        if self.kernel_size == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(OpError::InvalidParams(*self));
        }
        Ok(())
    }

    /// Output length along one spatial axis, `None` if it would be empty.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let out = match self.padding {
            Padding::Same => input.div_ceil(self.stride),
            Padding::Valid => {
                if input < self.kernel_size {
                    return None;
                }
                (input - self.kernel_size) / self.stride + 1
            }
        };
        (out > 0).then_some(out)
    }

    /// Leading (top/left) zero padding for an axis of length `input`.
    pub fn pad_before(&self, input: usize) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => {
                let out = input.div_ceil(self.stride);
                let needed = ((out.saturating_sub(1)) * self.stride + self.kernel_size)
                    .saturating_sub(input);
                needed / 2
            }
        }
    }
}

struct Geometry {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn geometry(input: Shape, p: &ConvParams) -> Result<Geometry, OpError> {
    p.validate()?;
    if input.channels != p.in_channels {
        return Err(OpError::ChannelMismatch {
            expected: p.in_channels,
            got: input.channels,
        });
    }
    match (p.output_len(input.height), p.output_len(input.width)) {
        (Some(out_h), Some(out_w)) => Ok(Geometry {
            out_h,
            out_w,
            pad_top: p.pad_before(input.height),
            pad_left: p.pad_before(input.width),
        }),
        _ => Err(OpError::EmptyOutput { input, params: *p }),
    }
}

fn check_weights(weights: Shape, expected: Shape) -> Result<(), OpError> {
    if weights != expected {
        return Err(OpError::WeightShape {
            expected,
            got: weights,
        });
    }
    Ok(())
}

/// Input coordinate for output index `o` and tap `t`, or `None` when it lands in padding.
#[inline]
fn tap(o: usize, t: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    (o * stride + t).checked_sub(pad).filter(|&i| i < len)
}

/// Full convolution with weights laid out `(k, k, M, N)`.
///
/// `out[b,y,x,n] = Σ_{i,j,m} in[b, y·s+i−pad, x·s+j−pad, m] · w[i,j,m,n]`; taps in the
/// padding read zero.
pub fn conv2d_standard<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    params: &ConvParams,
) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    let g = geometry(s, params)?;
    let (k, m, n) = (params.kernel_size, params.in_channels, params.out_channels);
    check_weights(weights.shape(), Shape::new(k, k, m, n))?;

    let mut out = Tensor::zeros(Shape::new(s.batch, g.out_h, g.out_w, n))?;
    let w = weights.data();
    let src = input.data();
    let row_stride = s.width * m;
    let dst = out.data_mut();
    for b in 0..s.batch {
        let img = &src[b * s.height * row_stride..(b + 1) * s.height * row_stride];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let base = ((b * g.out_h + oy) * g.out_w + ox) * n;
                let acc = &mut dst[base..base + n];
                for i in 0..k {
                    let Some(iy) = tap(oy, i, params.stride, g.pad_top, s.height) else {
                        continue;
                    };
                    for j in 0..k {
                        let Some(ix) = tap(ox, j, params.stride, g.pad_left, s.width) else {
                            continue;
                        };
                        let px = &img[iy * row_stride + ix * m..iy * row_stride + (ix + 1) * m];
                        let wtap = &w[(i * k + j) * m * n..(i * k + j + 1) * m * n];
                        for (&a, wrow) in px.iter().zip(wtap.chunks_exact(n)) {
                            for (o, &wv) in acc.iter_mut().zip(wrow) {
                                *o += a * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One `k×k` filter per input channel; weights laid out `(k, k, M, 1)`.
pub fn conv2d_depthwise<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    params: &ConvParams,
) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    let g = geometry(s, params)?;
    let (k, m) = (params.kernel_size, params.in_channels);
    check_weights(weights.shape(), Shape::new(k, k, m, 1))?;

    let mut out = Tensor::zeros(Shape::new(s.batch, g.out_h, g.out_w, m))?;
    let w = weights.data();
    let src = input.data();
    let row_stride = s.width * m;
    let dst = out.data_mut();
    for b in 0..s.batch {
        let img = &src[b * s.height * row_stride..(b + 1) * s.height * row_stride];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let base = ((b * g.out_h + oy) * g.out_w + ox) * m;
                let acc = &mut dst[base..base + m];
                for i in 0..k {
                    let Some(iy) = tap(oy, i, params.stride, g.pad_top, s.height) else {
                        continue;
                    };
                    for j in 0..k {
                        let Some(ix) = tap(ox, j, params.stride, g.pad_left, s.width) else {
                            continue;
                        };
                        let px = &img[iy * row_stride + ix * m..iy * row_stride + (ix + 1) * m];
                        let wtap = &w[(i * k + j) * m..(i * k + j + 1) * m];
                        for ((o, &a), &wv) in acc.iter_mut().zip(px).zip(wtap) {
                            *o += a * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 1×1 convolution: a per-pixel linear map with weights `(1, 1, M, N)`.
pub fn conv2d_pointwise<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    let ws = weights.shape();
    if ws.batch != 1 || ws.height != 1 || ws.width == 0 || ws.channels == 0 {
        return Err(OpError::WeightShape {
            expected: Shape::new(1, 1, s.channels, ws.channels),
            got: ws,
        });
    }
    if ws.width != s.channels {
        return Err(OpError::ChannelMismatch {
            expected: ws.width,
            got: s.channels,
        });
    }
    let (m, n) = (ws.width, ws.channels);
    let pixels = s.batch * s.height * s.width;
    let mut out = Tensor::zeros(Shape::new(s.batch, s.height, s.width, n))?;
    T::gemm(pixels, m, n, input.data(), weights.data(), out.data_mut());
    Ok(out)
}
