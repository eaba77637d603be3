//! Batched training-mode forward pass and reverse-mode gradients.
//!
//! Batch norm uses batch statistics over `(sample, y, x)` during training.
//! Gradients are summed over the batch in sample order into f64 buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{Activation, Layer, LayerKind, ModelGraph, BN_EPS};
use crate::infer::layer_linear;
use crate::kernels::{conv3x3_backward, depthwise3x3_backward, pointwise1x1_backward, relu6, relu6_backward};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &Layer) -> Self {
        let bn = layer.bn.as_ref().map_or(0, |b| b.channels());
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
            gamma: vec![0.0; bn],
            beta: vec![0.0; bn],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(graph: &ModelGraph) -> Self {
        Self { layers: graph.layers.iter().map(LayerGrads::zeros_like).collect() }
    }
}

/// Batch statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Elements per channel (`batch · height · width`).
    pub count: usize,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Normalized conv output per sample (batch-norm layers only).
    xhat: Vec<Tensor>,
    inv_std: Vec<f64>,
    /// Pre-activation per sample (ReLU6 layers only).
    pre: Vec<Tensor>,
    stats: Option<BatchStats>,
}

/// Everything the backward pass needs from one training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l][n]`: input of layer `l` for sample `n`.
    inputs: Vec<Vec<Tensor>>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn batch_stats(&self) -> impl Iterator<Item = Option<&BatchStats>> {
        self.layers.iter().map(|l| l.stats.as_ref())
    }
}

/// Training-mode forward over a batch; returns the head outputs.
pub fn forward_train(graph: &ModelGraph, batch: &[Tensor]) -> Result<(Vec<Tensor>, ForwardCache)> {
    let mut cache = ForwardCache { inputs: Vec::with_capacity(graph.layers.len()), layers: Vec::new() };
    let mut current: Vec<Tensor> = batch.to_vec();
    for layer in &graph.layers {
        let mut z: Vec<Tensor> = current.iter().map(|x| layer_linear(layer, x)).collect::<Result<_>>()?;
        let mut lc = LayerCache { xhat: Vec::new(), inv_std: Vec::new(), pre: Vec::new(), stats: None };
        if let Some(bn) = &layer.bn {
            let channels = layer.desc.out_channels;
            let count = z.len() * z[0].plane_len();
            let mut mean = vec![0.0f64; channels];
            let mut var = vec![0.0f64; channels];
            for c in 0..channels {
                let s: f64 = z.iter().flat_map(|t| t.channel(c)).map(|&v| v as f64).sum();
                mean[c] = s / count as f64;
                let q: f64 = z.iter().flat_map(|t| t.channel(c)).map(|&v| { let d = v as f64 - mean[c]; d * d }).sum();
                var[c] = q / count as f64;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS as f64)).collect();
            let mut xhat = z.clone();
            for (t, xh) in z.iter_mut().zip(xhat.iter_mut()) {
                for c in 0..channels {
                    let (g, b) = (bn.gamma[c] as f64, bn.beta[c] as f64);
                    for (v, h) in t.channel_mut(c).iter_mut().zip(xh.channel_mut(c)) {
                        let n = (*v as f64 - mean[c]) * inv_std[c];
                        *h = n as f32;
                        *v = (g * n + b) as f32;
                    }
                }
            }
            lc.xhat = xhat;
            lc.inv_std = inv_std;
            lc.stats = Some(BatchStats { mean, var, count });
        }
        if layer.desc.activation == Activation::Relu6 {
            lc.pre = z.clone();
            for t in &mut z {
                t.data.iter_mut().for_each(|v| *v = relu6(*v));
            }
        }
        cache.inputs.push(core::mem::replace(&mut current, z));
        cache.layers.push(lc);
    }
    Ok((current, cache))
}

/// Gradients of the summed per-sample losses w.r.t. every trainable
/// parameter, given `grad_out[n] = ∂loss/∂head_n`.
pub fn backward(graph: &ModelGraph, cache: &ForwardCache, grad_out: Vec<Tensor>) -> Gradients {
    backward_with_input(graph, cache, grad_out).0
}

/// Like [`backward`], also returning `∂loss/∂input` per sample.
pub fn backward_with_input(graph: &ModelGraph, cache: &ForwardCache, grad_out: Vec<Tensor>) -> (Gradients, Vec<Tensor>) {
    let mut grads = Gradients::zeros_like(graph);
    let mut g = grad_out;
    for (l, layer) in graph.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let lg = &mut grads.layers[l];
        if layer.desc.activation == Activation::Relu6 {
            for (gn, pre) in g.iter_mut().zip(&lc.pre) {
                relu6_backward(pre, gn);
            }
        }
        if let Some(bn) = &layer.bn {
            let count = lc.stats.as_ref().unwrap().count as f64;
            for c in 0..layer.desc.out_channels {
                let mut sum_dy = 0.0;
                let mut sum_dy_xhat = 0.0;
                for (gn, xh) in g.iter().zip(&lc.xhat) {
                    for (&d, &h) in gn.channel(c).iter().zip(xh.channel(c)) {
                        sum_dy += d as f64;
                        sum_dy_xhat += d as f64 * h as f64;
                    }
                }
                lg.beta[c] += sum_dy;
                lg.gamma[c] += sum_dy_xhat;
                let k = bn.gamma[c] as f64 * lc.inv_std[c] / count;
                for (gn, xh) in g.iter_mut().zip(&lc.xhat) {
                    for (d, &h) in gn.channel_mut(c).iter_mut().zip(xh.channel(c)) {
                        *d = (k * (count * *d as f64 - sum_dy - h as f64 * sum_dy_xhat)) as f32;
                    }
                }
            }
        }
        let want_in = true;
        let bias = if layer.desc.has_batchnorm { None } else { Some(&mut lg.bias) };
        let mut bias = bias.map(|b| b.as_mut_slice());
        let mut next = Vec::with_capacity(g.len());
        for (x, gn) in cache.inputs[l].iter().zip(&g) {
            let gb = bias.as_deref_mut();
            let gin = match layer.desc.kind {
                LayerKind::Conv3x3 => conv3x3_backward(x, &layer.weights, layer.desc.stride, gn, &mut lg.weights, gb, want_in),
                LayerKind::Depthwise3x3 => depthwise3x3_backward(x, &layer.weights, layer.desc.stride, gn, &mut lg.weights, gb, want_in),
                LayerKind::Pointwise1x1 => pointwise1x1_backward(x, &layer.weights, gn, &mut lg.weights, gb, want_in),
            };
            next.push(gin.unwrap());
        }
        g = next;
    }
    (grads, g)
}
