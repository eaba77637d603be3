//! YOLOv2-style head decoding, IoU and greedy non-maximum suppression.
//!
//! The head emits 5 channels per anchor, `(tx, ty, tw, th, to)`, with no class
//! channels: the detector is single-class and the score is the objectness
//! `sigmoid(to)` alone. Boxes are kept in center format and converted to
//! corner format (`x = cx - w/2`, `y = cy - h/2`) for IoU and file output.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{bail, Result};
use crate::math::sigmoid;
use crate::tensor::Tensor;

/// Pixels per output cell (total downsampling of the backbone).
pub const CELL_SIZE: f32 = 4.0;
pub const VALUES_PER_ANCHOR: usize = 5;
pub const DEFAULT_NMS_IOU: f32 = 0.3;

/// Corner-format box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl Rect {
    pub fn area(&self) -> f32 {
        self.w * self.h
    }

    pub fn center(&self) -> (f32, f32) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }
}

/// Intersection over union of two corner-format boxes.
pub fn iou(a: &Rect, b: &Rect) -> f32 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU of two box shapes sharing a center.
pub fn shape_iou(a: (f32, f32), b: (f32, f32)) -> f32 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
}

impl Detection {
    pub fn rect(&self) -> Rect {
        Rect { x: self.cx - 0.5 * self.w, y: self.cy - 0.5 * self.h, w: self.w, h: self.h }
    }

    /// Clip to an image of `width × height`, keeping the box non-empty.
    pub fn clipped_rect(&self, width: f32, height: f32) -> Rect {
        let r = self.rect();
        let x0 = r.x.clamp(0.0, width);
        let y0 = r.y.clamp(0.0, height);
        let x1 = (r.x + r.w).clamp(0.0, width);
        let y1 = (r.y + r.h).clamp(0.0, height);
        Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }
}

/// Descending score, then ascending `cx, cy, w, h`.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.cx.total_cmp(&b.cx))
        .then(a.cy.total_cmp(&b.cy))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
}

/// Anchor box priors `(w, h)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet(pub Vec<(f32, f32)>);

/// Priors sized for people seen from the ceiling at this resolution.
pub const DEFAULT_ANCHORS: [(f32, f32); 5] = [(3.5, 3.5), (4.5, 6.0), (6.0, 4.5), (6.0, 6.0), (7.5, 7.5)];

impl Default for AnchorSet {
    fn default() -> Self {
        Self(DEFAULT_ANCHORS.to_vec())
    }
}

impl AnchorSet {
    pub fn new(pairs: Vec<(f32, f32)>) -> Result<Self> {
        if pairs.is_empty() || pairs.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())) {
            bail!(Validation, "anchors must be non-empty with positive finite sizes");
        }
        Ok(Self(pairs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the anchor whose shape best overlaps `(w, h)`; ties go to the lower index.
    pub fn best_match(&self, w: f32, h: f32) -> usize {
        let mut best = 0;
        let mut best_iou = f32::NEG_INFINITY;
        for (i, &a) in self.0.iter().enumerate() {
            let v = shape_iou((w, h), a);
            if v > best_iou {
                best = i;
                best_iou = v;
            }
        }
        best
    }
}

/// k-means over box shapes with `1 - IoU` as distance. Deterministic:
/// centers start at area quantiles of the input. Results are sorted by area.
pub fn kmeans_anchors(shapes: &[(f32, f32)], k: usize, iterations: usize) -> Result<AnchorSet> {
    if k == 0 || shapes.len() < k {
        bail!(Config, "k-means needs at least k={} boxes, got {}", k, shapes.len());
    }
    let mut sorted: Vec<(f32, f32)> = shapes.to_vec();
    sorted.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
    let mut centers: Vec<(f32, f32)> = (0..k).map(|i| sorted[(2 * i + 1) * sorted.len() / (2 * k)]).collect();
    let mut assignment = alloc::vec![usize::MAX; sorted.len()];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, &s) in sorted.iter().enumerate() {
            let a = AnchorSet(centers.clone()).best_match(s.0, s.1);
            if assignment[i] != a {
                assignment[i] = a;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let (mut sw, mut sh, mut n) = (0.0f64, 0.0f64, 0usize);
            for (i, s) in sorted.iter().enumerate() {
                if assignment[i] == c {
                    sw += s.0 as f64;
                    sh += s.1 as f64;
                    n += 1;
                }
            }
            if n > 0 {
                *center = ((sw / n as f64) as f32, (sh / n as f64) as f32);
            }
        }
        if !changed {
            break;
        }
    }
    centers.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
    AnchorSet::new(centers)
}

/// Decode a raw head tensor `(5·A) × rows × cols` into detections with
/// `score >= conf_threshold`, in cell-major then anchor order.
pub fn decode(raw: &Tensor, anchors: &AnchorSet, conf_threshold: f32) -> Result<Vec<Detection>> {
    if raw.channels % VALUES_PER_ANCHOR != 0 {
        bail!(Dimension, "head has {} channels, not a multiple of {}", raw.channels, VALUES_PER_ANCHOR);
    }
    let n_anchors = raw.channels / VALUES_PER_ANCHOR;
    if n_anchors != anchors.len() {
        bail!(Dimension, "head encodes {} anchors but {} were given", n_anchors, anchors.len());
    }
    let mut out = Vec::new();
    for i in 0..raw.height {
        for j in 0..raw.width {
            for (a, &(aw, ah)) in anchors.0.iter().enumerate() {
                let base = a * VALUES_PER_ANCHOR;
                let score = sigmoid(raw.at(base + 4, i, j));
                if score < conf_threshold {
                    continue;
                }
                out.push(Detection {
                    cx: (j as f32 + sigmoid(raw.at(base, i, j))) * CELL_SIZE,
                    cy: (i as f32 + sigmoid(raw.at(base + 1, i, j))) * CELL_SIZE,
                    w: aw * libm::expf(raw.at(base + 2, i, j)),
                    h: ah * libm::expf(raw.at(base + 3, i, j)),
                    score,
                });
            }
        }
    }
    Ok(out)
}

/// Greedy NMS: visit in [`detection_order`], keep a box iff its IoU with every
/// kept box is below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut order: Vec<Detection> = dets.to_vec();
    order.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        let r = d.rect();
        if kept.iter().all(|k| iou(&k.rect(), &r) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}
