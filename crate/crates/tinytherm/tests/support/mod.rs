//! Independent reference implementations used by the integration tests.
//! Written for clarity, not speed; they share no code with the library.
#![allow(dead_code)]

use tinytherm_core::detect::{Detection, Rect};

/// Zero-padded 3×3 convolution, direct definition.
pub fn conv3x3_ref(x: &[f32], c: usize, h: usize, w: usize, wt: &[f32], b: &[f32], oc: usize, stride: usize) -> Vec<f32> {
    let (oh, ow) = ((h + stride - 1) / stride, (w + stride - 1) / stride);
    let mut out = vec![0f32; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b.get(o).copied().unwrap_or(0.0) as f64;
                for i in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let y = (oy * stride + ky) as i64 - 1;
                            let xx = (ox * stride + kx) as i64 - 1;
                            if y >= 0 && y < h as i64 && xx >= 0 && xx < w as i64 {
                                s += x[i * h * w + y as usize * w + xx as usize] as f64 * wt[((o * c + i) * 3 + ky) * 3 + kx] as f64;
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s as f32;
            }
        }
    }
    out
}

pub fn depthwise_ref(x: &[f32], c: usize, h: usize, w: usize, wt: &[f32], b: &[f32], stride: usize) -> Vec<f32> {
    let mut out = Vec::new();
    for i in 0..c {
        let plane = &x[i * h * w..(i + 1) * h * w];
        let bias = b.get(i).map(|&v| vec![v]).unwrap_or_default();
        out.extend(conv3x3_ref(plane, 1, h, w, &wt[i * 9..(i + 1) * 9], &bias, 1, stride));
    }
    out
}

pub fn pointwise_ref(x: &[f32], c: usize, h: usize, w: usize, wt: &[f32], b: &[f32], oc: usize) -> Vec<f32> {
    let mut out = vec![0f32; oc * h * w];
    for o in 0..oc {
        for p in 0..h * w {
            let mut s = b.get(o).copied().unwrap_or(0.0) as f64;
            for i in 0..c {
                s += x[i * h * w + p] as f64 * wt[o * c + i] as f64;
            }
            out[o * h * w + p] = s as f32;
        }
    }
    out
}

pub fn iou_ref(a: &Rect, b: &Rect) -> f64 {
    let ix = (f64::from(a.x + a.w).min(f64::from(b.x + b.w)) - f64::from(a.x).max(f64::from(b.x))).max(0.0);
    let iy = (f64::from(a.y + a.h).min(f64::from(b.y + b.h)) - f64::from(a.y).max(f64::from(b.y))).max(0.0);
    let inter = ix * iy;
    let union = f64::from(a.w * a.h) + f64::from(b.w * b.h) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Descending score, then box coordinates.
pub fn rank(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.cx.total_cmp(&b.cx))
        .then(a.cy.total_cmp(&b.cy))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
}

/// O(n²) suppression: a box survives iff no surviving box ranked above it
/// overlaps it by `thr` or more.
pub fn nms_ref(dets: &[Detection], thr: f32) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank);
    let mut alive = vec![true; sorted.len()];
    for i in 0..sorted.len() {
        if !alive[i] {
            continue;
        }
        for j in i + 1..sorted.len() {
            if alive[j] && iou_ref(&sorted[i].rect(), &sorted[j].rect()) >= thr as f64 {
                alive[j] = false;
            }
        }
    }
    sorted.into_iter().zip(alive).filter(|(_, a)| *a).map(|(d, _)| d).collect()
}

/// Precision/recall at one threshold by re-matching only the detections
/// whose score is at least `t`.
pub fn pr_at(dets: &[Vec<Detection>], gts: &[Vec<Rect>], t: f32) -> (f64, f64) {
    let (mut tp, mut fp, mut n_gt) = (0usize, 0usize, 0usize);
    for (d, g) in dets.iter().zip(gts) {
        n_gt += g.len();
        let mut kept: Vec<&Detection> = d.iter().filter(|x| x.score >= t).collect();
        kept.sort_by(|a, b| rank(a, b));
        let mut used = vec![false; g.len()];
        for det in kept {
            let mut best: Option<(usize, f64)> = None;
            for (k, gt) in g.iter().enumerate() {
                let v = iou_ref(&det.rect(), gt);
                if !used[k] && v >= 0.5 && best.map_or(true, |(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            match best {
                Some((k, _)) => {
                    used[k] = true;
                    tp += 1;
                }
                None => fp += 1,
            }
        }
    }
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    (p, tp as f64 / n_gt as f64)
}

/// AP and best F1 by enumerating every distinct score as a threshold.
pub fn brute_force_metrics(dets: &[Vec<Detection>], gts: &[Vec<Rect>]) -> (f64, f64) {
    let mut ts: Vec<f32> = dets.iter().flatten().map(|d| d.score).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let pts: Vec<(f64, f64)> = ts.iter().map(|&t| pr_at(dets, gts, t)).collect();
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (k, &(_, r)) in pts.iter().enumerate() {
        let envelope = pts[k..].iter().map(|p| p.0).fold(0.0, f64::max);
        ap += (r - prev_r) * envelope;
        prev_r = r;
    }
    let f1 = pts.iter().map(|&(p, r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }).fold(0.0, f64::max);
    (ap, f1)
}

/// Central difference of a scalar function of one coordinate.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Symmetric relative error with an absolute floor for vanishing gradients.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Small deterministic generator so tests need no extra dependencies.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u32(&mut self) -> u32 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 33) as u32
    }
    pub fn unit(&mut self) -> f64 {
        self.next_u32() as f64 / (1u64 << 31) as f64
    }
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
    pub fn below(&mut self, n: usize) -> usize {
        (self.unit() * n as f64) as usize % n
    }
    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f32> {
        (0..n).map(|_| self.range(lo, hi) as f32).collect()
    }
}

/// f64 parameters of one layer for [`forward_ref64`].
#[derive(Clone)]
pub struct LayerRef64 {
    pub kind: tinytherm_core::LayerKind,
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub relu6: bool,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// `(gamma, beta)` when the layer is batch-normalized.
    pub bn: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn layers_ref64(g: &tinytherm_core::ModelGraph) -> Vec<LayerRef64> {
    g.layers
        .iter()
        .map(|l| LayerRef64 {
            kind: l.desc.kind,
            in_c: l.desc.in_channels,
            out_c: l.desc.out_channels,
            stride: l.desc.stride,
            relu6: l.desc.activation == tinytherm_core::graph::Activation::Relu6,
            w: l.weights.iter().map(|&v| v as f64).collect(),
            b: l.bias.iter().map(|&v| v as f64).collect(),
            bn: l.bn.as_ref().map(|bn| (bn.gamma.iter().map(|&v| v as f64).collect(), bn.beta.iter().map(|&v| v as f64).collect())),
        })
        .collect()
}

fn conv_ref64(x: &[f64], c: usize, h: usize, w: usize, l: &LayerRef64) -> (Vec<f64>, usize, usize) {
    use tinytherm_core::LayerKind::*;
    let k = if l.kind == Pointwise1x1 { 1 } else { 3 };
    let pad = k / 2;
    let (oh, ow) = ((h + l.stride - 1) / l.stride, (w + l.stride - 1) / l.stride);
    let mut out = vec![0f64; l.out_c * oh * ow];
    for o in 0..l.out_c {
        let inputs: Vec<usize> = if l.kind == Depthwise3x3 { vec![o] } else { (0..c).collect() };
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = l.b.get(o).copied().unwrap_or(0.0);
                for (j, &i) in inputs.iter().enumerate() {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * l.stride + ky) as i64 - pad as i64;
                            let xx = (ox * l.stride + kx) as i64 - pad as i64;
                            if y >= 0 && y < h as i64 && xx >= 0 && xx < w as i64 {
                                let widx = if l.kind == Depthwise3x3 { o * 9 + ky * 3 + kx } else { ((o * inputs.len() + j) * k + ky) * k + kx };
                                s += x[i * h * w + y as usize * w + xx as usize] * l.w[widx];
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    (out, oh, ow)
}

/// Training-mode forward in f64: batch statistics over (sample, y, x) with
/// biased variance and eps 1e-5. Returns per-sample head outputs and the
/// regime (0: below 0, 1: linear, 2: at or above 6) of every ReLU6 unit.
pub fn forward_ref64(layers: &[LayerRef64], batch: &[Vec<f64>], c: usize, h: usize, w: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut xs: Vec<Vec<f64>> = batch.to_vec();
    let (mut c, mut h, mut w) = (c, h, w);
    let mut regimes = Vec::new();
    for l in layers {
        let mut ys = Vec::new();
        let (mut oh, mut ow) = (h, w);
        for x in &xs {
            let (y, a, b) = conv_ref64(x, c, h, w, l);
            ys.push(y);
            (oh, ow) = (a, b);
        }
        let plane = oh * ow;
        if let Some((gamma, beta)) = &l.bn {
            for o in 0..l.out_c {
                let n = (ys.len() * plane) as f64;
                let mean = ys.iter().flat_map(|y| &y[o * plane..(o + 1) * plane]).sum::<f64>() / n;
                let var = ys.iter().flat_map(|y| &y[o * plane..(o + 1) * plane]).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + 1e-5).sqrt();
                for y in &mut ys {
                    for v in &mut y[o * plane..(o + 1) * plane] {
                        *v = gamma[o] * (*v - mean) * inv + beta[o];
                    }
                }
            }
        }
        if l.relu6 {
            for y in &mut ys {
                for v in y.iter_mut() {
                    regimes.push((*v > 0.0) as u8 + (*v >= 6.0) as u8);
                    *v = v.clamp(0.0, 6.0);
                }
            }
        }
        xs = ys;
        (c, h, w) = (l.out_c, oh, ow);
    }
    (xs, regimes)
}
