//! Floating-point sequential executor and batch-norm folding.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::frame::{DiffImage, NormalizedImage};
use crate::graph::{Activation, BatchNorm, Layer, LayerKind, ModelGraph, BN_EPS};
use crate::kernels::{conv3x3, depthwise3x3, pointwise1x1, relu6_inplace};
use crate::tensor::Tensor;

/// Build a network input from a primary plane and an optional motion plane.
pub fn assemble_input(primary: &[f32], motion: Option<&[f32]>, height: usize, width: usize) -> Result<Tensor> {
    match motion {
        Some(m) => Tensor::stack(&[primary, m], height, width),
        None => Tensor::stack(&[primary], height, width),
    }
}

pub fn image_input(image: &NormalizedImage, motion: Option<&DiffImage>) -> Result<Tensor> {
    assemble_input(&image.values, motion.map(|m| m.values.as_slice()), image.height, image.width)
}

/// Convolution part of a layer, without normalization or activation.
pub fn layer_linear(layer: &Layer, input: &Tensor) -> Result<Tensor> {
    let d = &layer.desc;
    match d.kind {
        LayerKind::Conv3x3 => conv3x3(input, &layer.weights, &layer.bias, d.out_channels, d.stride),
        LayerKind::Depthwise3x3 => depthwise3x3(input, &layer.weights, &layer.bias, d.stride),
        LayerKind::Pointwise1x1 => pointwise1x1(input, &layer.weights, &layer.bias, d.out_channels),
    }
}

/// Inference-mode batch norm with running statistics.
pub fn batchnorm_inference(bn: &BatchNorm, t: &mut Tensor) {
    for c in 0..t.channels {
        let inv = 1.0 / libm::sqrt(bn.var[c] as f64 + BN_EPS as f64);
        let (g, b, m) = (bn.gamma[c] as f64, bn.beta[c] as f64, bn.mean[c] as f64);
        for v in t.channel_mut(c) {
            *v = (g * (*v as f64 - m) * inv + b) as f32;
        }
    }
}

pub fn layer_forward(layer: &Layer, input: &Tensor) -> Result<Tensor> {
    if input.channels != layer.desc.in_channels {
        bail!(Dimension, "layer expects {} channels, got {}", layer.desc.in_channels, input.channels);
    }
    let mut out = layer_linear(layer, input)?;
    if let Some(bn) = &layer.bn {
        batchnorm_inference(bn, &mut out);
    }
    if layer.desc.activation == Activation::Relu6 {
        relu6_inplace(&mut out);
    }
    Ok(out)
}

/// Run every layer in order and return the raw head tensor.
pub fn forward(graph: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    check_input(graph, input)?;
    let mut x = input.clone();
    for layer in &graph.layers {
        x = layer_forward(layer, &x)?;
    }
    Ok(x)
}

/// Like [`forward`] but keeps the input and every layer output.
pub fn forward_trace(graph: &ModelGraph, input: &Tensor) -> Result<Vec<Tensor>> {
    check_input(graph, input)?;
    let mut trace = Vec::with_capacity(graph.layers.len() + 1);
    trace.push(input.clone());
    for layer in &graph.layers {
        let next = layer_forward(layer, trace.last().unwrap())?;
        trace.push(next);
    }
    Ok(trace)
}

fn check_input(graph: &ModelGraph, input: &Tensor) -> Result<()> {
    if input.channels != graph.input_channels {
        bail!(Dimension, "model takes {} input channels, got {}", graph.input_channels, input.channels);
    }
    if input.height != graph.input_height || input.width != graph.input_width {
        bail!(
            Dimension,
            "model takes {}x{} inputs, got {}x{}",
            graph.input_width,
            graph.input_height,
            input.width,
            input.height
        );
    }
    Ok(())
}

/// Fold every batch norm into its convolution:
/// `w' = w·γ/√(σ²+ε)`, `b' = (b − μ)·γ/√(σ²+ε) + β`.
pub fn fold_batchnorm(graph: &ModelGraph) -> Result<ModelGraph> {
    let mut out = graph.clone();
    for (i, layer) in out.layers.iter_mut().enumerate() {
        if layer.desc.has_batchnorm != layer.bn.is_some() {
            bail!(Structure, "layer {} batch norm is not attached to its convolution", i);
        }
        let Some(bn) = layer.bn.take() else { continue };
        let per = layer.desc.weights_per_filter();
        let mut bias = Vec::with_capacity(layer.desc.out_channels);
        for c in 0..layer.desc.out_channels {
            let scale = bn.gamma[c] as f64 / libm::sqrt(bn.var[c] as f64 + BN_EPS as f64);
            for w in &mut layer.weights[c * per..(c + 1) * per] {
                *w = (*w as f64 * scale) as f32;
            }
            let b0 = layer.bias.get(c).copied().unwrap_or(0.0) as f64;
            bias.push(((b0 - bn.mean[c] as f64) * scale + bn.beta[c] as f64) as f32);
        }
        layer.bias = bias;
        layer.desc.has_batchnorm = false;
    }
    out.validate()?;
    Ok(out)
}
