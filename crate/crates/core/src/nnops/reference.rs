//! Deliberately naive double-precision implementations used as test oracles.
//!
//! These pad the input explicitly and then run a plain "valid" convolution, so they share
//! no indexing code with the production kernels. They are slow; keep inputs small.

use crate::model::{ArchSpec, LayerSpec};
use crate::tensor::{Shape, Tensor};

use super::conv::{ConvParams, Padding};

/// Zero-pads `input` per `p` and returns it with the output extent.
fn padded(input: &Tensor<f64>, p: &ConvParams) -> (Tensor<f64>, usize, usize) {
    let s = input.shape();
    let extent = |len: usize| -> (usize, usize, usize) {
        match p.padding {
            Padding::Valid => (0, len, (len - p.kernel_size) / p.stride + 1),
            Padding::Same => {
                let out = len.div_ceil(p.stride);
                let total = ((out - 1) * p.stride + p.kernel_size).saturating_sub(len);
                (total / 2, len + total, out)
            }
        }
    };
    let (top, ph, oh) = extent(s.height);
    let (left, pw, ow) = extent(s.width);
    let shape = Shape::new(s.batch, ph, pw, s.channels);
    let t = Tensor::from_fn(shape, |b, y, x, c| {
        let (iy, ix) = (y as isize - top as isize, x as isize - left as isize);
        if iy < 0 || ix < 0 || iy as usize >= s.height || ix as usize >= s.width {
            0.0
        } else {
            input.get(b, iy as usize, ix as usize, c)
        }
    })
    .expect("padded shape fits");
    (t, oh, ow)
}

/// Standard convolution, weights `(k, k, M, N)`.
pub fn conv2d_standard_ref(input: &Tensor<f64>, weights: &Tensor<f64>, p: &ConvParams) -> Tensor<f64> {
    let (x, oh, ow) = padded(input, p);
    let k = p.kernel_size;
    let shape = Shape::new(input.shape().batch, oh, ow, p.out_channels);
    Tensor::from_fn(shape, |b, y, xo, n| {
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                for m in 0..p.in_channels {
                    acc += x.get(b, y * p.stride + i, xo * p.stride + j, m) * weights.get(i, j, m, n);
                }
            }
        }
        acc
    })
    .expect("output shape fits")
}

/// Depthwise convolution, weights `(k, k, M, 1)`.
pub fn conv2d_depthwise_ref(input: &Tensor<f64>, weights: &Tensor<f64>, p: &ConvParams) -> Tensor<f64> {
    let (x, oh, ow) = padded(input, p);
    let k = p.kernel_size;
    let shape = Shape::new(input.shape().batch, oh, ow, p.in_channels);
    Tensor::from_fn(shape, |b, y, xo, m| {
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                acc += x.get(b, y * p.stride + i, xo * p.stride + j, m) * weights.get(i, j, m, 0);
            }
        }
        acc
    })
    .expect("output shape fits")
}

/// Pointwise (1×1) convolution, weights `(1, 1, M, N)`.
pub fn conv2d_pointwise_ref(input: &Tensor<f64>, weights: &Tensor<f64>) -> Tensor<f64> {
    let s = input.shape();
    let n_out = weights.shape().channels;
    Tensor::from_fn(Shape::new(s.batch, s.height, s.width, n_out), |b, y, x, n| {
        (0..s.channels).map(|m| input.get(b, y, x, m) * weights.get(0, 0, m, n)).sum()
    })
    .expect("output shape fits")
}

/// Cost tallies from [`count_by_loops`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoopCount {
    pub macs: u64,
    pub params: u64,
}

/// Walks every output element and kernel tap of every layer one at a time, adding one
/// per multiply-accumulate (padding taps included), and counts parameters by
/// enumerating weight elements. Independent of the closed-form accounting.
pub fn count_by_loops(arch: &ArchSpec, side: usize) -> LoopCount {
    let mut total = LoopCount::default();
    let (mut h, mut w, mut c) = (side, side, arch.input_channels);
    for layer in &arch.layers {
        for shape in layer.weight_shapes() {
            for _ in 0..shape.numel().expect("weight shape fits") {
                total.params += 1;
            }
        }
        match layer {
            LayerSpec::StandardConv(p) | LayerSpec::DepthwiseConv(p) | LayerSpec::PointwiseConv(p) => {
                let depthwise = matches!(layer, LayerSpec::DepthwiseConv(_));
                let (oh, ow) = (p.output_len(h).unwrap_or(0), p.output_len(w).unwrap_or(0));
                let out_c = if depthwise { c } else { p.out_channels };
                let per_output_taps = if depthwise { 1 } else { c };
                for _y in 0..oh {
                    for _x in 0..ow {
                        for _n in 0..out_c {
                            for _i in 0..p.kernel_size {
                                for _j in 0..p.kernel_size {
                                    for _m in 0..per_output_taps {
                                        total.macs += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                (h, w, c) = (oh, ow, out_c);
            }
            LayerSpec::GlobalAvgPool => (h, w) = (1, 1),
            LayerSpec::Dense { in_dim, out_dim } => {
                for _k in 0..*out_dim {
                    for _e in 0..*in_dim {
                        total.macs += 1;
                    }
                }
                c = *out_dim;
            }
            LayerSpec::ScaleBias { .. } | LayerSpec::Activation { .. } => {}
        }
    }
    total
}

/// `max |a − b| / max(max |b|, 1)`: error relative to the reference's scale.
pub fn relative_error(actual: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(actual.len(), reference.len(), "compared slices differ in length");
    let scale = reference.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let diff = actual
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}
