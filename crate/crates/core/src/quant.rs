//! 8-bit post-training quantization and an integer-only executor.
//!
//! Weights are symmetric per output channel (`scale = max|w| / 127`,
//! zero point 0). Activations are asymmetric per tensor, calibrated from
//! running min/max. Biases are int32 at scale `s_in · s_w`.
//!
//! Requantization is bit-exact: the real multiplier `M = s_in·s_w / s_out`
//! is stored as a mantissa `m0 ∈ [2³⁰, 2³¹)` and a right shift `n` with
//! `M ≈ m0 · 2⁻ⁿ`. The int32 accumulator is multiplied by `m0` in 64 bits
//! and shifted right by `n` rounding half away from zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::arena::{plan_shapes, ArenaPlan};
use crate::detect::AnchorSet;
use crate::error::{bail, Result};
use crate::graph::{Activation, LayerDesc, LayerKind, ModelGraph};
use crate::infer::forward_trace;
use crate::math::round_away;
use crate::tensor::Tensor;

/// Smallest activation span; a `[0, 0]` range is widened to this.
pub const MIN_RANGE_SPAN: f32 = 1e-6;
/// Scale given to an all-zero weight channel.
pub const ZERO_CHANNEL_SCALE: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            bail!(Validation, "quantization scale must be positive, got {}", scale);
        }
        if !(-128..=127).contains(&zero_point) {
            bail!(Validation, "zero point {} outside the int8 range", zero_point);
        }
        Ok(Self { scale, zero_point })
    }

    /// Asymmetric parameters covering `[min, max]`, which is first widened
    /// to include 0 and to at least [`MIN_RANGE_SPAN`].
    pub fn from_range(min: f32, max: f32) -> Self {
        let lo = min.min(0.0);
        let mut hi = max.max(0.0);
        if hi - lo < MIN_RANGE_SPAN {
            hi = lo + MIN_RANGE_SPAN;
        }
        let scale = (hi - lo) / 255.0;
        let zp = round_away(-128.0 - lo as f64 / scale as f64).clamp(-128.0, 127.0) as i32;
        Self { scale, zero_point: zp }
    }

    /// Symmetric parameters for values bounded by `max_abs`.
    pub fn symmetric(max_abs: f32) -> Self {
        let scale = if max_abs > 0.0 { max_abs / 127.0 } else { ZERO_CHANNEL_SCALE };
        Self { scale, zero_point: 0 }
    }
}

/// `clamp(round_half_away(x / scale) + zero_point, −128, 127)`.
pub fn quantize(x: f32, qp: QuantParams) -> i8 {
    let q = round_away(x as f64 / qp.scale as f64) + qp.zero_point as f64;
    q.clamp(-128.0, 127.0) as i8
}

pub fn dequantize(q: i8, qp: QuantParams) -> f32 {
    (q as i32 - qp.zero_point) as f32 * qp.scale
}

/// Fixed-point form of a positive real multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requant {
    /// Normalized mantissa in `[2³⁰, 2³¹)`, or 0 for a zero multiplier.
    pub multiplier: i32,
    /// Right shift; negative means a left shift.
    pub shift: i32,
}

impl Requant {
    pub fn from_real(m: f64) -> Self {
        if !(m > 0.0 && m.is_finite()) {
            return Self { multiplier: 0, shift: 0 };
        }
        // m = frac · 2^exp with frac in [0.5, 1).
        let (frac, mut exp) = libm::frexp(m);
        let mut m0 = round_away(frac * (1u64 << 31) as f64) as i64;
        if m0 == 1i64 << 31 {
            m0 /= 2;
            exp += 1;
        }
        Self { multiplier: m0 as i32, shift: 31 - exp }
    }

    pub fn as_real(&self) -> f64 {
        self.multiplier as f64 * libm::exp2(-self.shift as f64)
    }

    /// `round_half_away(acc · m0 · 2⁻ⁿ)`, saturated to i32.
    pub fn apply(&self, acc: i32) -> i32 {
        let prod = acc as i64 * self.multiplier as i64;
        let r = if self.shift <= 0 {
            prod.saturating_mul(1i64 << (-self.shift).min(62))
        } else if self.shift >= 63 {
            0
        } else {
            rounding_shift(prod, self.shift as u32)
        };
        r.clamp(i32::MIN as i64, i32::MAX as i64) as i32
    }
}

fn rounding_shift(x: i64, n: u32) -> i64 {
    let half = 1i64 << (n - 1);
    if x >= 0 {
        (x + half) >> n
    } else {
        -((-x + half) >> n)
    }
}

/// Running per-tensor `(min, max)` over tensor 0 (the input) and the output
/// of every layer. Every range includes 0.
pub fn calibrate(folded: &ModelGraph, inputs: &[Tensor]) -> Result<Vec<(f32, f32)>> {
    if inputs.is_empty() {
        bail!(Config, "calibration set is empty");
    }
    if folded.has_batchnorm() {
        bail!(Structure, "calibration expects a graph with batch norm folded");
    }
    let mut ranges = vec![(0.0f32, 0.0f32); folded.layers.len() + 1];
    for input in inputs {
        for (r, t) in ranges.iter_mut().zip(forward_trace(folded, input)?) {
            for &v in &t.data {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
    }
    Ok(ranges)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub desc: LayerDesc,
    pub weights: Vec<i8>,
    pub weight_scales: Vec<f32>,
    pub bias: Vec<i32>,
    pub requant: Vec<Requant>,
    /// Output clamp: the full int8 range, or `[q(0), q(6)]` for ReLU6.
    pub clamp: (i32, i32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub layers: Vec<QuantLayer>,
    /// One entry per activation tensor: input, then each layer output.
    pub activations: Vec<QuantParams>,
    pub anchors: AnchorSet,
    pub input_height: usize,
    pub input_width: usize,
}

/// Quantize a BN-folded graph with calibrated ranges.
pub fn quantize_model(folded: &ModelGraph, ranges: &[(f32, f32)]) -> Result<QuantizedModel> {
    if folded.has_batchnorm() {
        bail!(Structure, "quantization expects a graph with batch norm folded");
    }
    let needed = folded.layers.len() + 1;
    if ranges.len() < needed {
        return Err(crate::Error::Coverage(ranges.len()));
    }
    let activations: Vec<QuantParams> = ranges[..needed].iter().map(|&(lo, hi)| QuantParams::from_range(lo, hi)).collect();
    let mut layers = Vec::with_capacity(folded.layers.len());
    for (i, layer) in folded.layers.iter().enumerate() {
        let (s_in, out) = (activations[i].scale as f64, activations[i + 1]);
        let per = layer.desc.weights_per_filter();
        let mut weights = Vec::with_capacity(layer.weights.len());
        let mut weight_scales = Vec::with_capacity(layer.desc.out_channels);
        let mut bias = Vec::with_capacity(layer.desc.out_channels);
        let mut requant = Vec::with_capacity(layer.desc.out_channels);
        for c in 0..layer.desc.out_channels {
            let w = &layer.weights[c * per..(c + 1) * per];
            let qp = QuantParams::symmetric(w.iter().fold(0.0f32, |m, v| m.max(v.abs())));
            weights.extend(w.iter().map(|&v| quantize(v, qp)));
            weight_scales.push(qp.scale);
            let b = layer.bias.get(c).copied().unwrap_or(0.0) as f64;
            let bq = round_away(b / (s_in * qp.scale as f64)).clamp(i32::MIN as f64, i32::MAX as f64);
            bias.push(bq as i32);
            requant.push(Requant::from_real(s_in * qp.scale as f64 / out.scale as f64));
        }
        let clamp = match layer.desc.activation {
            Activation::None => (-128, 127),
            Activation::Relu6 => {
                let six = round_away(6.0 / out.scale as f64) as i64 + out.zero_point as i64;
                (out.zero_point.max(-128), six.clamp(-128, 127) as i32)
            }
        };
        layers.push(QuantLayer { desc: layer.desc, weights, weight_scales, bias, requant, clamp });
    }
    Ok(QuantizedModel {
        layers,
        activations,
        anchors: folded.anchors.clone(),
        input_height: folded.input_height,
        input_width: folded.input_width,
    })
}

/// Integer tensor in planar layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<i8>,
}

impl QuantizedModel {
    pub fn input_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.desc.in_channels)
    }

    pub fn tensor_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut out = vec![(self.input_channels(), h, w)];
        for l in &self.layers {
            (h, w) = l.desc.output_hw(h, w);
            out.push((l.desc.out_channels, h, w));
        }
        out
    }

    /// Arena at one byte per activation; weights are int8 plus int32 biases.
    pub fn memory_plan(&self) -> ArenaPlan {
        let (tensors, arena_bytes) = plan_shapes(&self.tensor_shapes(), 1);
        let weight_bytes = self.layers.iter().map(|l| l.weights.len() + 4 * l.bias.len()).sum();
        ArenaPlan { tensors, arena_bytes, weight_bytes }
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn quantize_input(&self, input: &Tensor) -> Result<QTensor> {
        if input.shape() != (self.input_channels(), self.input_height, self.input_width) {
            bail!(Dimension, "input shape {:?} does not match the model", input.shape());
        }
        let qp = self.activations[0];
        Ok(QTensor {
            channels: input.channels,
            height: input.height,
            width: input.width,
            data: input.data.iter().map(|&v| quantize(v, qp)).collect(),
        })
    }

    /// Integer-only forward pass; returns the quantized head tensor.
    pub fn forward_int8(&self, input: &QTensor) -> Result<QTensor> {
        if (input.channels, input.height, input.width) != (self.input_channels(), self.input_height, self.input_width) {
            bail!(Dimension, "input shape does not match the model");
        }
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer_int8(layer, &x, self.activations[i].zero_point, self.activations[i + 1].zero_point);
        }
        Ok(x)
    }

    pub fn dequantize_output(&self, q: &QTensor) -> Tensor {
        let qp = *self.activations.last().expect("model has activations");
        Tensor {
            channels: q.channels,
            height: q.height,
            width: q.width,
            data: q.data.iter().map(|&v| dequantize(v, qp)).collect(),
        }
    }

    /// Quantize, run, dequantize.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let q = self.forward_int8(&self.quantize_input(input)?)?;
        Ok(self.dequantize_output(&q))
    }
}

fn layer_int8(layer: &QuantLayer, x: &QTensor, z_in: i32, z_out: i32) -> QTensor {
    let d = &layer.desc;
    let (oh, ow) = d.output_hw(x.height, x.width);
    let centered: Vec<i32> = x.data.iter().map(|&v| v as i32 - z_in).collect();
    let plane = x.height * x.width;
    let mut out = vec![0i8; d.out_channels * oh * ow];
    let mut emit = |o: usize, idx: usize, acc: i32| {
        let v = layer.requant[o].apply(acc.wrapping_add(layer.bias[o])) as i64 + z_out as i64;
        out[idx] = v.clamp(layer.clamp.0 as i64, layer.clamp.1 as i64) as i8;
    };
    match d.kind {
        LayerKind::Pointwise1x1 => {
            for o in 0..d.out_channels {
                let w = &layer.weights[o * d.in_channels..(o + 1) * d.in_channels];
                for p in 0..plane {
                    let mut acc = 0i32;
                    for (c, &wv) in w.iter().enumerate() {
                        acc = acc.wrapping_add(centered[c * plane + p] * wv as i32);
                    }
                    emit(o, o * plane + p, acc);
                }
            }
        }
        LayerKind::Conv3x3 | LayerKind::Depthwise3x3 => {
            let depthwise = d.kind == LayerKind::Depthwise3x3;
            let per = d.weights_per_filter();
            for o in 0..d.out_channels {
                let w = &layer.weights[o * per..(o + 1) * per];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0i32;
                        let channels = if depthwise { o..o + 1 } else { 0..d.in_channels };
                        for c in channels {
                            let wc = if depthwise { 0 } else { c * 9 };
                            for ky in 0..3 {
                                let iy = (oy * d.stride + ky) as isize - 1;
                                if iy < 0 || iy >= x.height as isize {
                                    continue;
                                }
                                for kx in 0..3 {
                                    let ix = (ox * d.stride + kx) as isize - 1;
                                    if ix < 0 || ix >= x.width as isize {
                                        continue;
                                    }
                                    let v = centered[c * plane + iy as usize * x.width + ix as usize];
                                    acc = acc.wrapping_add(v * w[wc + ky * 3 + kx] as i32);
                                }
                            }
                        }
                        emit(o, (o * oh + oy) * ow + ox, acc);
                    }
                }
            }
        }
    }
    QTensor { channels: d.out_channels, height: oh, width: ow, data: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Layer;

    #[test]
    fn quantize_examples() {
        let qp = QuantParams { scale: 0.5, zero_point: 0 };
        assert_eq!(quantize(3.2, qp), 6);
        assert_eq!(quantize(1e6, qp), 127);
        assert_eq!(quantize(-1e6, qp), -128);
        assert_eq!(quantize(0.25, qp), 1);
        assert_eq!(quantize(-0.25, qp), -1);
        let z = QuantParams { scale: 0.1, zero_point: -7 };
        assert_eq!(quantize(0.0, z), -7);
    }

    #[test]
    fn degenerate_ranges() {
        let qp = QuantParams::from_range(0.0, 0.0);
        assert!(qp.scale > 0.0);
        assert_eq!(quantize(0.0, qp), qp.zero_point as i8);
        assert_eq!(QuantParams::symmetric(0.0).scale, ZERO_CHANNEL_SCALE);
    }

    #[test]
    fn zero_maps_exactly() {
        for &(lo, hi) in &[(-1.0f32, 3.0f32), (0.0, 6.0), (-2.5, 0.0), (-0.01, 100.0)] {
            let qp = QuantParams::from_range(lo, hi);
            assert_eq!(dequantize(quantize(0.0, qp), qp), 0.0);
        }
    }

    #[test]
    fn requant_represents_multiplier() {
        for &m in &[0.5, 0.75, 1e-4, 0.3333, 1.7, 12.0] {
            let r = Requant::from_real(m);
            assert!((1 << 30..=i32::MAX).contains(&r.multiplier));
            assert!(((r.as_real() - m) / m).abs() < 1e-9);
        }
    }

    #[test]
    fn requant_rounds_half_away() {
        let half = Requant { multiplier: 1 << 30, shift: 31 };
        assert_eq!(half.apply(3), 2);
        assert_eq!(half.apply(-3), -2);
        assert_eq!(half.apply(1), 1);
        assert_eq!(half.apply(-1), -1);
        assert_eq!(half.apply(2), 1);
    }

    fn unit_pointwise(weights: Vec<f32>, in_c: usize, out_c: usize) -> ModelGraph {
        let layer = Layer {
            desc: LayerDesc {
                kind: LayerKind::Pointwise1x1,
                in_channels: in_c,
                out_channels: out_c,
                stride: 1,
                has_batchnorm: false,
                activation: Activation::None,
            },
            weights,
            bias: vec![0.0; out_c],
            bn: None,
        };
        ModelGraph::new(vec![layer], AnchorSet(vec![(1.0, 1.0)]), in_c, 2, 2).unwrap()
    }

    #[test]
    fn zero_weights_give_output_zero_point() {
        let g = unit_pointwise(vec![0.0; 6], 2, 3);
        let input = Tensor::from_vec(2, 2, 2, vec![0.3, -0.2, 0.9, 0.1, 0.0, 0.5, -0.7, 0.2]).unwrap();
        let ranges = calibrate(&g, &[input.clone()]).unwrap();
        let q = quantize_model(&g, &ranges).unwrap();
        let out = q.forward_int8(&q.quantize_input(&input).unwrap()).unwrap();
        assert!(out.data.iter().all(|&v| v as i32 == q.activations[1].zero_point));
    }

    #[test]
    fn integer_matmul_oracle() {
        // Unit scales everywhere reduce the layer to a clamped integer matmul.
        let w: Vec<i8> = vec![3, -2, 1, 5, -4, 0];
        let inp: Vec<i8> = vec![7, -3, 2, 10, -6, 4, 1, -1];
        let layer = QuantLayer {
            desc: LayerDesc {
                kind: LayerKind::Pointwise1x1,
                in_channels: 2,
                out_channels: 3,
                stride: 1,
                has_batchnorm: false,
                activation: Activation::None,
            },
            weights: w.clone(),
            weight_scales: vec![1.0; 3],
            bias: vec![0; 3],
            requant: vec![Requant::from_real(1.0); 3],
            clamp: (-128, 127),
        };
        let x = QTensor { channels: 2, height: 2, width: 2, data: inp.clone() };
        let out = layer_int8(&layer, &x, 0, 0);
        for o in 0..3 {
            for p in 0..4 {
                let acc: i32 = (0..2).map(|c| inp[c * 4 + p] as i32 * w[o * 2 + c] as i32).sum();
                assert_eq!(out.data[o * 4 + p] as i32, acc.clamp(-128, 127));
            }
        }
    }

    #[test]
    fn calibration_ranges() {
        let g = unit_pointwise(vec![1.0, 0.0, 0.0, -2.0, 1.0, 1.0], 2, 3);
        let a = Tensor::from_vec(2, 2, 2, vec![0.5, 1.0, 2.0, 0.25, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = calibrate(&g, &[a.clone()]).unwrap();
        assert_eq!(r[0], (0.0, 2.0));
        assert_eq!(r[1], (-0.8, 2.3));
        assert!(calibrate(&g, &[]).is_err());
        assert!(matches!(quantize_model(&g, &r[..1]), Err(crate::Error::Coverage(_))));
    }

    proptest::proptest! {
        #[test]
        fn weight_round_trip_within_half_scale(w in proptest::collection::vec(-3.0f32..3.0, 1..64)) {
            let qp = QuantParams::symmetric(w.iter().fold(0.0f32, |m, v| m.max(v.abs())));
            for &v in &w {
                proptest::prop_assert!((dequantize(quantize(v, qp), qp) - v).abs() <= qp.scale * 0.5 * (1.0 + 1e-5));
            }
        }

        #[test]
        fn in_range_activation_error_bounded(lo in -5.0f32..0.0, span in 0.01f32..10.0, t in 0.0f32..1.0) {
            let qp = QuantParams::from_range(lo, lo + span);
            let x = lo + t * span;
            let q = quantize(x, qp);
            proptest::prop_assert!((dequantize(q, qp) - x).abs() <= qp.scale * 0.5 + qp.scale * 1e-3 + 1e-6 || q == 127 || q == -128);
        }
    }
}
