use serde::{Deserialize, Serialize};

use crate::model::{ArchSpec, LayerKind, LayerSpec};

/// Multiply-accumulate and parameter counts for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub index: usize,
    pub kind: LayerKind,
    pub output_side: usize,
    pub output_channels: usize,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
}

impl CostReport {
    /// Sum of MACs over layers of one kind.
    pub fn macs_of(&self, kind: LayerKind) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.kind == kind)
            .map(|l| l.macs)
            .sum()
    }
}

/// Counts MACs and parameters for `arch` fed a `input_resolution × input_resolution` image.
///
/// One MAC is one multiply-accumulate; bias additions, normalization, activations and
/// pooling cost nothing. Convolution taps that fall in the zero padding are counted, so
/// a `k×k` convolution costs `k²` MACs per output element per input channel.
///
/// | layer      | MACs              | params       |
/// |------------|-------------------|--------------|
/// | standard   | k²·M·N·H_out·W_out | k²·M·N      |
/// | depthwise  | k²·M·H_out·W_out   | k²·M        |
/// | pointwise  | M·N·H·W            | M·N         |
/// | scale+bias | 0                  | 2·C         |
/// | dense      | M·K                | M·K + K     |
pub fn count_costs(arch: &ArchSpec, input_resolution: usize) -> CostReport {
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (index, (layer, g)) in arch.layers.iter().zip(arch.trace(input_resolution)).enumerate() {
        let out_area = (g.out_height * g.out_width) as u64;
        let (macs, params) = match *layer {
            LayerSpec::StandardConv(p) => {
                let w = (p.kernel_size * p.kernel_size * p.in_channels * p.out_channels) as u64;
                (w * out_area, w)
            }
            LayerSpec::DepthwiseConv(p) => {
                let w = (p.kernel_size * p.kernel_size * p.in_channels) as u64;
                (w * out_area, w)
            }
            LayerSpec::PointwiseConv(p) => {
                let w = (p.in_channels * p.out_channels) as u64;
                (w * out_area, w)
            }
            LayerSpec::ScaleBias { channels } => (0, 2 * channels as u64),
            LayerSpec::Dense { in_dim, out_dim } => {
                let w = (in_dim * out_dim) as u64;
                (w, w + out_dim as u64)
            }
            LayerSpec::Activation { .. } | LayerSpec::GlobalAvgPool => (0, 0),
        };
        layers.push(LayerCost {
            index,
            kind: layer.kind(),
            output_side: g.out_height,
            output_channels: g.out_channels,
            macs,
            params,
        });
    }
    CostReport {
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_params: layers.iter().map(|l| l.params).sum(),
        layers,
    }
}
