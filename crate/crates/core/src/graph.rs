//! Sequential detector architecture: layer descriptors, parameters and
//! cost accounting.
//!
//! Weight layouts (all row-major):
//! - `Conv3x3`: `[out][in][3][3]`
//! - `Depthwise3x3`: `[channel][3][3]`
//! - `Pointwise1x1`: `[out][in]`
//!
//! A layer with batch norm stores no bias; its BN block holds
//! `gamma, beta, running mean, running variance` per output channel.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::detect::{AnchorSet, VALUES_PER_ANCHOR};
use crate::error::{bail, Result};
use crate::frame::{FRAME_HEIGHT, FRAME_WIDTH};
use crate::math::gaussian;

pub const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv3x3,
    Depthwise3x3,
    Pointwise1x1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu6,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub has_batchnorm: bool,
    pub activation: Activation,
}

impl LayerDesc {
    pub fn weight_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => self.out_channels * self.in_channels * 9,
            LayerKind::Depthwise3x3 => self.out_channels * 9,
            LayerKind::Pointwise1x1 => self.out_channels * self.in_channels,
        }
    }

    /// Weights belonging to one output channel.
    pub fn weights_per_filter(&self) -> usize {
        self.weight_count() / self.out_channels.max(1)
    }

    pub fn param_count(&self) -> usize {
        let extra = if self.has_batchnorm { 4 } else { 1 };
        self.weight_count() + extra * self.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn macs(&self, in_h: usize, in_w: usize) -> u64 {
        let (oh, ow) = self.output_hw(in_h, in_w);
        let per_output = match self.kind {
            LayerKind::Conv3x3 => self.in_channels * 9,
            LayerKind::Depthwise3x3 => 9,
            LayerKind::Pointwise1x1 => self.in_channels,
        };
        (oh * ow * self.out_channels * per_output) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn retain(&self, keep: &[usize]) -> Self {
        let pick = |v: &[f32]| keep.iter().map(|&i| v[i]).collect();
        Self { gamma: pick(&self.gamma), beta: pick(&self.beta), mean: pick(&self.mean), var: pick(&self.var) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub desc: LayerDesc,
    pub weights: Vec<f32>,
    /// Empty when `desc.has_batchnorm`.
    pub bias: Vec<f32>,
    pub bn: Option<BatchNorm>,
}

impl Layer {
    pub fn stored_len(&self) -> usize {
        self.weights.len() + self.bias.len() + self.bn.as_ref().map_or(0, |b| 4 * b.channels())
    }

    fn check(&self, index: usize) -> Result<()> {
        let d = &self.desc;
        if d.in_channels == 0 || d.out_channels == 0 {
            bail!(Structure, "layer {} has zero channels", index);
        }
        if d.stride != 1 && d.stride != 2 {
            bail!(Structure, "layer {} has stride {}", index, d.stride);
        }
        if d.kind == LayerKind::Depthwise3x3 && d.in_channels != d.out_channels {
            bail!(Structure, "depthwise layer {} maps {} to {} channels", index, d.in_channels, d.out_channels);
        }
        if d.kind == LayerKind::Pointwise1x1 && d.stride != 1 {
            bail!(Structure, "pointwise layer {} must have stride 1", index);
        }
        if self.weights.len() != d.weight_count() {
            bail!(Structure, "layer {} stores {} weights, expected {}", index, self.weights.len(), d.weight_count());
        }
        match (&self.bn, d.has_batchnorm) {
            (Some(bn), true) => {
                let c = d.out_channels;
                if bn.gamma.len() != c || bn.beta.len() != c || bn.mean.len() != c || bn.var.len() != c {
                    bail!(Structure, "layer {} batch norm does not cover {} channels", index, c);
                }
                if !self.bias.is_empty() {
                    bail!(Structure, "layer {} has both bias and batch norm", index);
                }
            }
            (None, false) => {
                if self.bias.len() != d.out_channels {
                    bail!(Structure, "layer {} stores {} biases, expected {}", index, self.bias.len(), d.out_channels);
                }
            }
            _ => bail!(Structure, "layer {} batch-norm flag disagrees with stored parameters", index),
        }
        Ok(())
    }
}

/// Channel widths and stride placement for the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Output width of the first 3×3 conv followed by the output width of
    /// each depthwise-separable block.
    pub widths: Vec<usize>,
    /// Separable blocks (0-based) whose depthwise conv has stride 2.
    pub stride2_blocks: Vec<usize>,
    pub num_anchors: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { widths: vec![16, 32, 64, 128, 256, 512, 1024, 512], stride2_blocks: vec![0, 1], num_anchors: 5 }
    }
}

impl ArchConfig {
    /// The layer list: 3×3 conv, one depthwise + pointwise pair per
    /// remaining width, then the 1×1 detection head.
    pub fn layers(&self, input_channels: usize) -> Result<Vec<LayerDesc>> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.num_anchors == 0 {
            bail!(Config, "architecture needs non-zero widths and anchors");
        }
        let hidden = |kind, in_channels, out_channels, stride| LayerDesc {
            kind,
            in_channels,
            out_channels,
            stride,
            has_batchnorm: true,
            activation: Activation::Relu6,
        };
        let mut out = vec![hidden(LayerKind::Conv3x3, input_channels, self.widths[0], 1)];
        for (block, pair) in self.widths.windows(2).enumerate() {
            let stride = if self.stride2_blocks.contains(&block) { 2 } else { 1 };
            out.push(hidden(LayerKind::Depthwise3x3, pair[0], pair[0], stride));
            out.push(hidden(LayerKind::Pointwise1x1, pair[0], pair[1], 1));
        }
        out.push(LayerDesc {
            kind: LayerKind::Pointwise1x1,
            in_channels: *self.widths.last().unwrap(),
            out_channels: VALUES_PER_ANCHOR * self.num_anchors,
            stride: 1,
            has_batchnorm: false,
            activation: Activation::None,
        });
        Ok(out)
    }
}

/// Objectness bias of a freshly initialized head: most cells are empty.
pub const HEAD_OBJECTNESS_PRIOR: f32 = -4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub layers: Vec<Layer>,
    pub anchors: AnchorSet,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
}

impl ModelGraph {
    /// Assemble a graph; checks parameter shapes and channel chaining.
    pub fn new(layers: Vec<Layer>, anchors: AnchorSet, input_channels: usize, input_height: usize, input_width: usize) -> Result<Self> {
        let g = Self { layers, anchors, input_channels, input_height, input_width };
        g.validate()?;
        Ok(g)
    }

    /// Randomly initialized graph (Kaiming-normal weights, identity BN).
    pub fn from_arch(arch: &ArchConfig, input_channels: usize, anchors: AnchorSet, seed: u64) -> Result<Self> {
        if !(1..=2).contains(&input_channels) {
            bail!(Config, "input_channels must be 1 or 2, got {}", input_channels);
        }
        if anchors.len() != arch.num_anchors {
            bail!(Config, "architecture expects {} anchors, got {}", arch.num_anchors, anchors.len());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let descs = arch.layers(input_channels)?;
        let n = descs.len();
        let layers = descs
            .into_iter()
            .enumerate()
            .map(|(i, desc)| {
                let fan_in = desc.weights_per_filter() as f64;
                let std = if i + 1 == n { 0.01 } else { libm::sqrt(2.0 / fan_in) };
                let weights = (0..desc.weight_count()).map(|_| (gaussian(&mut rng) * std) as f32).collect();
                let (bias, bn) = if desc.has_batchnorm {
                    (Vec::new(), Some(BatchNorm::identity(desc.out_channels)))
                } else {
                    let mut b = vec![0.0; desc.out_channels];
                    if i + 1 == n {
                        for a in 0..desc.out_channels / VALUES_PER_ANCHOR {
                            b[a * VALUES_PER_ANCHOR + 4] = HEAD_OBJECTNESS_PRIOR;
                        }
                    }
                    (b, None)
                };
                Layer { desc, weights, bias, bn }
            })
            .collect();
        let g = Self::new(layers, anchors, input_channels, FRAME_HEIGHT, FRAME_WIDTH)?;
        g.validate_detector()?;
        Ok(g)
    }

    /// Structural checks shared by every graph, detector or not.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check(i)?;
            if layer.desc.in_channels != channels {
                bail!(Structure, "layer {} expects {} input channels but receives {}", i, layer.desc.in_channels, channels);
            }
            channels = layer.desc.out_channels;
        }
        Ok(())
    }

    /// Detector-specific checks: linear head with 5 values per anchor and a
    /// total downsampling of 4.
    pub fn validate_detector(&self) -> Result<()> {
        self.validate()?;
        let Some(head) = self.layers.last() else {
            bail!(Structure, "detector has no layers");
        };
        if head.desc.kind != LayerKind::Pointwise1x1 || head.desc.activation != Activation::None || head.desc.has_batchnorm {
            bail!(Structure, "head must be a linear 1x1 conv without batch norm");
        }
        if head.desc.out_channels != VALUES_PER_ANCHOR * self.anchors.len() {
            bail!(Structure, "head has {} channels for {} anchors", head.desc.out_channels, self.anchors.len());
        }
        let factor: usize = self.layers.iter().map(|l| l.desc.stride).product();
        if factor != 4 {
            bail!(Structure, "total downsampling is {}, expected 4", factor);
        }
        Ok(())
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(self.input_channels, |l| l.desc.out_channels)
    }

    /// `(channels, height, width)` of the input and of every layer output.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut shapes = vec![(self.input_channels, h, w)];
        for l in &self.layers {
            (h, w) = l.desc.output_hw(h, w);
            shapes.push((l.desc.out_channels, h, w));
        }
        shapes
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        *self.tensor_shapes().last().unwrap()
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.desc.param_count()).sum()
    }

    /// Number of f32 values actually stored.
    pub fn stored_param_len(&self) -> usize {
        self.layers.iter().map(Layer::stored_len).sum()
    }

    pub fn count_macs(&self) -> u64 {
        self.count_macs_at(self.input_height, self.input_width)
    }

    pub fn count_macs_at(&self, height: usize, width: usize) -> u64 {
        let (mut h, mut w) = (height, width);
        let mut total = 0;
        for l in &self.layers {
            total += l.desc.macs(h, w);
            (h, w) = l.desc.output_hw(h, w);
        }
        total
    }

    /// Indices of layers whose output channels may be pruned: the first conv
    /// and every pointwise conv except the head.
    pub fn prunable_layers(&self) -> Vec<usize> {
        let n = self.layers.len();
        (0..n.saturating_sub(1))
            .filter(|&i| self.layers[i].desc.kind != LayerKind::Depthwise3x3)
            .collect()
    }

    pub fn prunable_filter_count(&self) -> usize {
        self.prunable_layers().iter().map(|&i| self.layers[i].desc.out_channels).sum()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| l.desc.has_batchnorm)
    }
}

/// The reference detector: widths `[16, 32, 64, 128, 256, 512, 1024, 512]`,
/// stride-2 depthwise convs in the first two separable blocks, 5 anchors.
pub fn default_architecture(input_channels: usize) -> Result<ModelGraph> {
    ModelGraph::from_arch(&ArchConfig::default(), input_channels, AnchorSet::default(), 0)
}
