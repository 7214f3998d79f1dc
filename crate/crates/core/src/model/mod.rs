//! Network architecture, deterministic backbone initialization, the forward pass,
//! and the on-disk model bundle.

mod arch;
mod bundle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::nnops::{
    conv2d_depthwise, conv2d_pointwise, conv2d_standard, global_avg_pool, scale_bias, softmax,
    Dense, OpError,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub use arch::{
    build_arch, build_arch_with_activation, scale_channels, ArchError, ArchSpec, LayerGeometry,
    LayerKind, LayerSpec, DEFAULT_RESOLUTION, INPUT_CHANNELS,
};
pub use bundle::{load_bundle, save_bundle, BundleError, ModelBundle, FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("input shape {got} does not match expected {expected}")]
    InputShape { expected: Shape, got: Shape },
    #[error("expected {expected} weight tensors, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weight tensor {index} has shape {got}, expected {expected}")]
    WeightShape {
        index: usize,
        expected: Shape,
        got: Shape,
    },
    #[error("head produces {head} outputs but there are {labels} labels")]
    LabelMismatch { labels: usize, head: usize },
    #[error("head expects {head} inputs but the backbone emits {embedding}")]
    HeadInput { head: usize, embedding: usize },
}

/// Fan-in of a convolution weight tensor for He-style scaling.
fn fan_in(layer: &LayerSpec) -> Option<usize> {
    match *layer {
        LayerSpec::StandardConv(p) => Some(p.kernel_size * p.kernel_size * p.in_channels),
        LayerSpec::DepthwiseConv(p) => Some(p.kernel_size * p.kernel_size),
        LayerSpec::PointwiseConv(p) => Some(p.in_channels),
        _ => None,
    }
}

/// Deterministic backbone weights.
///
/// Convolution weights are drawn from `N(0, 2/fan_in)` using a ChaCha8 stream seeded with
/// `seed`, visiting tensors in storage order. Folded normalization layers start as the
/// identity (scale 1, bias 0).
pub fn init_backbone(arch: &ArchSpec, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    for layer in arch.backbone_layers() {
        let shapes = layer.weight_shapes();
        match (layer, fan_in(layer)) {
            (_, Some(fan_in)) => {
                let std = (2.0 / fan_in as f64).sqrt();
                for shape in shapes {
                    let n = shape.numel().expect("weight shape fits in memory");
                    let data = (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (z * std) as f32
                        })
                        .collect();
                    weights.push(Tensor::from_vec(shape, data).expect("length matches shape"));
                }
            }
            (LayerSpec::ScaleBias { .. }, None) => {
                let [scale, bias] = [shapes[0], shapes[1]];
                weights.push(Tensor::full(scale, 1.0).expect("small shape"));
                weights.push(Tensor::zeros(bias).expect("small shape"));
            }
            _ => {}
        }
    }
    weights
}

/// Checks `weights` against the tensor shapes `layers` require.
pub fn check_weight_shapes<T: Scalar>(
    layers: &[LayerSpec],
    weights: &[Tensor<T>],
) -> Result<(), ModelError> {
    let expected: Vec<Shape> = layers.iter().flat_map(LayerSpec::weight_shapes).collect();
    if expected.len() != weights.len() {
        return Err(ModelError::WeightCount {
            expected: expected.len(),
            got: weights.len(),
        });
    }
    for (index, (want, got)) in expected.iter().zip(weights).enumerate() {
        if *want != got.shape() {
            return Err(ModelError::WeightShape {
                index,
                expected: *want,
                got: got.shape(),
            });
        }
    }
    Ok(())
}

/// Runs `layers` over `input`, consuming weight tensors in storage order.
///
/// Dense layers are skipped; the result for a full backbone is the pooled `(N, 1, 1, C)`
/// feature map.
pub fn run_layers<T: Scalar>(
    layers: &[LayerSpec],
    weights: &[Tensor<T>],
    input: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    check_weight_shapes(layers, weights)?;
    let mut x = input.clone();
    let mut w = weights.iter();
    let mut next = || w.next().expect("weight count checked above");
    for layer in layers {
        x = match *layer {
            LayerSpec::StandardConv(p) => conv2d_standard(&x, next(), &p)?,
            LayerSpec::DepthwiseConv(p) => conv2d_depthwise(&x, next(), &p)?,
            LayerSpec::PointwiseConv(_) => conv2d_pointwise(&x, next())?,
            LayerSpec::ScaleBias { .. } => {
                let scale = next();
                let bias = next();
                scale_bias(&x, scale.data(), bias.data())?
            }
            LayerSpec::Activation { function } => function.apply(&x),
            LayerSpec::GlobalAvgPool => global_avg_pool(&x)?,
            LayerSpec::Dense { .. } => {
                next();
                next();
                continue;
            }
        };
    }
    Ok(x)
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub embedding: Vec<f32>,
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
}

/// Backbone embedding for a single preprocessed image of shape `(1, R, R, 3)`.
pub fn embed(bundle: &ModelBundle, image: &Tensor<f32>) -> Result<Vec<f32>, ModelError> {
    let r = bundle.arch().effective_resolution();
    let expected = Shape::new(1, r, r, bundle.arch().input_channels);
    if image.shape() != expected {
        return Err(ModelError::InputShape {
            expected,
            got: image.shape(),
        });
    }
    let pooled = run_layers(bundle.arch().backbone_layers(), bundle.backbone(), image)?;
    Ok(pooled.into_data())
}

/// Applies the dense head and softmax to an embedding.
pub fn classify_embedding(head: &Dense<f32>, embedding: &[f32]) -> Result<(Vec<f32>, Vec<f32>), ModelError> {
    let logits = head.forward(embedding)?;
    let probs = softmax(&logits)?;
    Ok((logits, probs))
}

/// Embedding, logits, and class probabilities for one image.
pub fn forward(bundle: &ModelBundle, image: &Tensor<f32>) -> Result<ForwardOutput, ModelError> {
    let embedding = embed(bundle, image)?;
    let (logits, probs) = classify_embedding(bundle.head(), &embedding)?;
    Ok(ForwardOutput {
        embedding,
        logits,
        probs,
    })
}
