use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnops::{Activation, ConvParams, Padding};
use crate::tensor::Shape;

pub const DEFAULT_RESOLUTION: usize = 224;
pub const INPUT_CHANNELS: usize = 3;

/// Entry convolution output channels before width scaling.
const STEM_CHANNELS: usize = 32;

/// (depthwise stride, pointwise output channels) for each separable block, before width scaling.
const SEPARABLE_BLOCKS: [(usize, usize); 13] = [
    (1, 64),
    (2, 128),
    (1, 128),
    (2, 256),
    (1, 256),
    (2, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (2, 1024),
    (1, 1024),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("{name} must lie in (0, 1], got {value}")]
    InvalidMultiplier { name: &'static str, value: f64 },
    #[error("effective input resolution must be at least 1 (base {base}, multiplier {multiplier})")]
    InvalidResolution { base: usize, multiplier: f64 },
    #[error("layer {index}: {message}")]
    Chain { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    StandardConv,
    DepthwiseConv,
    PointwiseConv,
    ScaleBias,
    Activation,
    GlobalAvgPool,
    Dense,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LayerKind::StandardConv => "StandardConv",
            LayerKind::DepthwiseConv => "DepthwiseConv",
            LayerKind::PointwiseConv => "PointwiseConv",
            LayerKind::ScaleBias => "ScaleBias",
            LayerKind::Activation => "Activation",
            LayerKind::GlobalAvgPool => "GlobalAvgPool",
            LayerKind::Dense => "Dense",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    StandardConv(ConvParams),
    DepthwiseConv(ConvParams),
    PointwiseConv(ConvParams),
    ScaleBias { channels: usize },
    Activation { function: Activation },
    GlobalAvgPool,
    Dense { in_dim: usize, out_dim: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::StandardConv(_) => LayerKind::StandardConv,
            LayerSpec::DepthwiseConv(_) => LayerKind::DepthwiseConv,
            LayerSpec::PointwiseConv(_) => LayerKind::PointwiseConv,
            LayerSpec::ScaleBias { .. } => LayerKind::ScaleBias,
            LayerSpec::Activation { .. } => LayerKind::Activation,
            LayerSpec::GlobalAvgPool => LayerKind::GlobalAvgPool,
            LayerSpec::Dense { .. } => LayerKind::Dense,
        }
    }

    /// Shapes of the trainable tensors this layer owns, in storage order.
    pub fn weight_shapes(&self) -> Vec<Shape> {
        match *self {
            LayerSpec::StandardConv(p) => vec![Shape::new(
                p.kernel_size,
                p.kernel_size,
                p.in_channels,
                p.out_channels,
            )],
            LayerSpec::DepthwiseConv(p) => {
                vec![Shape::new(p.kernel_size, p.kernel_size, p.in_channels, 1)]
            }
            LayerSpec::PointwiseConv(p) => vec![Shape::new(1, 1, p.in_channels, p.out_channels)],
            LayerSpec::ScaleBias { channels } => {
                vec![Shape::new(1, 1, 1, channels), Shape::new(1, 1, 1, channels)]
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                vec![Shape::new(1, 1, in_dim, out_dim), Shape::new(1, 1, 1, out_dim)]
            }
            LayerSpec::Activation { .. } | LayerSpec::GlobalAvgPool => Vec::new(),
        }
    }

    /// Channel count after this layer given `input` channels.
    pub fn output_channels(&self, input: usize) -> usize {
        match *self {
            LayerSpec::StandardConv(p) | LayerSpec::PointwiseConv(p) => p.out_channels,
            LayerSpec::DepthwiseConv(p) => p.in_channels,
            LayerSpec::Dense { out_dim, .. } => out_dim,
            LayerSpec::ScaleBias { .. } | LayerSpec::Activation { .. } | LayerSpec::GlobalAvgPool => {
                input
            }
        }
    }
}

/// Symbolic network description: the backbone body plus its global multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Base input side before the resolution multiplier.
    pub input_resolution: usize,
    pub width_multiplier: f64,
    pub resolution_multiplier: f64,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub embedding_dim: usize,
}

/// Per-layer output geometry produced by [`ArchSpec::trace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub in_height: usize,
    pub in_width: usize,
    pub in_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub out_channels: usize,
}

/// `max(1, round(α·c))`.
pub fn scale_channels(channels: usize, width_multiplier: f64) -> usize {
    ((channels as f64 * width_multiplier).round() as usize).max(1)
}

fn check_multiplier(name: &'static str, value: f64) -> Result<(), ArchError> {
    if value.is_finite() && value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(ArchError::InvalidMultiplier { name, value })
    }
}

/// Builds the depthwise-separable body: a stride-2 3×3 entry convolution followed by
/// 13 depthwise/pointwise blocks and global average pooling. Every convolution is
/// followed by a folded normalization (scale+bias) and the activation.
pub fn build_arch(
    width_multiplier: f64,
    resolution_multiplier: f64,
    base_resolution: usize,
) -> Result<ArchSpec, ArchError> {
    build_arch_with_activation(
        width_multiplier,
        resolution_multiplier,
        base_resolution,
        Activation::Relu6,
    )
}

pub fn build_arch_with_activation(
    width_multiplier: f64,
    resolution_multiplier: f64,
    base_resolution: usize,
    activation: Activation,
) -> Result<ArchSpec, ArchError> {
    check_multiplier("width multiplier", width_multiplier)?;
    check_multiplier("resolution multiplier", resolution_multiplier)?;
    let effective = (resolution_multiplier * base_resolution as f64).round() as usize;
    if effective == 0 {
        return Err(ArchError::InvalidResolution {
            base: base_resolution,
            multiplier: resolution_multiplier,
        });
    }

    let act = LayerSpec::Activation {
        function: activation,
    };
    let mut layers = Vec::with_capacity(3 + SEPARABLE_BLOCKS.len() * 6 + 1);
    let mut channels = scale_channels(STEM_CHANNELS, width_multiplier);
    layers.push(LayerSpec::StandardConv(ConvParams::new(
        3,
        2,
        Padding::Same,
        INPUT_CHANNELS,
        channels,
    )));
    layers.push(LayerSpec::ScaleBias { channels });
    layers.push(act);
    for &(stride, base_out) in &SEPARABLE_BLOCKS {
        let out = scale_channels(base_out, width_multiplier);
        layers.push(LayerSpec::DepthwiseConv(ConvParams::new(
            3,
            stride,
            Padding::Same,
            channels,
            channels,
        )));
        layers.push(LayerSpec::ScaleBias { channels });
        layers.push(act);
        layers.push(LayerSpec::PointwiseConv(ConvParams::pointwise(channels, out)));
        layers.push(LayerSpec::ScaleBias { channels: out });
        layers.push(act);
        channels = out;
    }
    layers.push(LayerSpec::GlobalAvgPool);

    let arch = ArchSpec {
        input_resolution: base_resolution,
        width_multiplier,
        resolution_multiplier,
        input_channels: INPUT_CHANNELS,
        layers,
        embedding_dim: channels,
    };
    arch.validate()?;
    Ok(arch)
}

impl ArchSpec {
    /// `round(ρ · input_resolution)`.
    pub fn effective_resolution(&self) -> usize {
        (self.resolution_multiplier * self.input_resolution as f64).round() as usize
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| {
                matches!(
                    l.kind(),
                    LayerKind::StandardConv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv
                )
            })
            .count()
    }

    /// Propagates a `side × side` input through the layer list.
    ///
    /// Layers whose output would be empty report zero extents; [`ArchSpec::validate`]
    /// rejects such chains.
    pub fn trace(&self, side: usize) -> Vec<LayerGeometry> {
        let (mut h, mut w, mut c) = (side, side, self.input_channels);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (oh, ow) = match layer {
                LayerSpec::StandardConv(p) | LayerSpec::DepthwiseConv(p) => (
                    p.output_len(h).unwrap_or(0),
                    p.output_len(w).unwrap_or(0),
                ),
                LayerSpec::GlobalAvgPool | LayerSpec::Dense { .. } => (1, 1),
                _ => (h, w),
            };
            let oc = layer.output_channels(c);
            out.push(LayerGeometry {
                in_height: h,
                in_width: w,
                in_channels: c,
                out_height: oh,
                out_width: ow,
                out_channels: oc,
            });
            (h, w, c) = (oh, ow, oc);
        }
        out
    }

    /// Checks multipliers, channel chaining, non-empty feature maps, and that the body ends
    /// in global pooling (optionally followed by dense layers).
    pub fn validate(&self) -> Result<(), ArchError> {
        check_multiplier("width multiplier", self.width_multiplier)?;
        check_multiplier("resolution multiplier", self.resolution_multiplier)?;
        let side = self.effective_resolution();
        if side == 0 {
            return Err(ArchError::InvalidResolution {
                base: self.input_resolution,
                multiplier: self.resolution_multiplier,
            });
        }
        let chain = |index: usize, message: String| ArchError::Chain { index, message };
        let mut pooled_channels = None;
        for (index, (layer, g)) in self.layers.iter().zip(self.trace(side)).enumerate() {
            let expect_in = |declared: usize| {
                if declared == g.in_channels {
                    Ok(())
                } else {
                    Err(chain(
                        index,
                        format!("declares {declared} input channels but receives {}", g.in_channels),
                    ))
                }
            };
            match *layer {
                LayerSpec::StandardConv(p) | LayerSpec::DepthwiseConv(p) | LayerSpec::PointwiseConv(p) => {
                    if pooled_channels.is_some() {
                        return Err(chain(index, "convolution after global pooling".into()));
                    }
                    p.validate().map_err(|e| chain(index, e.to_string()))?;
                    expect_in(p.in_channels)?;
                    if matches!(layer, LayerSpec::PointwiseConv(_))
                        && (p.kernel_size != 1 || p.stride != 1)
                    {
                        return Err(chain(index, "pointwise layer must be 1×1 with stride 1".into()));
                    }
                    if g.out_height == 0 || g.out_width == 0 {
                        return Err(chain(index, "empty feature map".into()));
                    }
                }
                LayerSpec::ScaleBias { channels } => expect_in(channels)?,
                LayerSpec::Activation { .. } => {}
                LayerSpec::GlobalAvgPool => {
                    if pooled_channels.is_some() {
                        return Err(chain(index, "repeated global pooling".into()));
                    }
                    pooled_channels = Some(g.in_channels);
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    if pooled_channels.is_none() {
                        return Err(chain(index, "dense layer before global pooling".into()));
                    }
                    if out_dim == 0 {
                        return Err(chain(index, "dense layer with zero outputs".into()));
                    }
                    expect_in(in_dim)?;
                }
            }
        }
        match pooled_channels {
            None => Err(chain(self.layers.len(), "body must end in global pooling".into())),
            Some(c) if c != self.embedding_dim => Err(chain(
                self.layers.len(),
                format!("embedding_dim {} but pooled width is {c}", self.embedding_dim),
            )),
            Some(_) => Ok(()),
        }
    }

    /// Backbone layers only, i.e. everything up to and including global pooling.
    pub fn backbone_layers(&self) -> &[LayerSpec] {
        let end = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::GlobalAvgPool))
            .map_or(self.layers.len(), |i| i + 1);
        &self.layers[..end]
    }

    /// Trainable tensor shapes of the backbone, in storage order.
    pub fn backbone_weight_shapes(&self) -> Vec<Shape> {
        self.backbone_layers()
            .iter()
            .flat_map(LayerSpec::weight_shapes)
            .collect()
    }

    /// Copy of the backbone with a `embedding_dim → classes` dense head appended.
    pub fn with_head(&self, classes: usize) -> ArchSpec {
        let mut arch = self.clone();
        arch.layers.truncate(self.backbone_layers().len());
        arch.layers.push(LayerSpec::Dense {
            in_dim: self.embedding_dim,
            out_dim: classes,
        });
        arch
    }
}
