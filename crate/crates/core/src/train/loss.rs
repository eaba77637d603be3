//! Single-class YOLOv2 loss with analytic gradient w.r.t. the raw head.

use alloc::vec::Vec;

use crate::detect::{iou, AnchorSet, Rect, CELL_SIZE, VALUES_PER_ANCHOR};
use crate::math::sigmoid64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub coord: f64,
    pub obj: f64,
    pub noobj: f64,
    /// Non-responsible anchors whose predicted box overlaps a ground truth by
    /// at least this IoU are not pushed towards zero objectness.
    pub ignore_iou: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { coord: 5.0, obj: 1.0, noobj: 0.5, ignore_iou: 0.6 }
    }
}

/// Responsible cell and anchor for one ground-truth box, with regression
/// targets: `tx*, ty*` are offsets inside the cell, `tw*, th*` log-ratios to
/// the anchor size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetAssignment {
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Targets {
    pub boxes: Vec<Rect>,
    pub assignments: Vec<TargetAssignment>,
}

pub fn assign_targets(boxes: &[Rect], anchors: &AnchorSet, rows: usize, cols: usize) -> Targets {
    let assignments = boxes
        .iter()
        .map(|b| {
            let (cx, cy) = b.center();
            let gx = (cx / CELL_SIZE) as f64;
            let gy = (cy / CELL_SIZE) as f64;
            let col = (libm::floor(gx).max(0.0) as usize).min(cols - 1);
            let row = (libm::floor(gy).max(0.0) as usize).min(rows - 1);
            let anchor = anchors.best_match(b.w, b.h);
            let (aw, ah) = anchors.0[anchor];
            TargetAssignment {
                row,
                col,
                anchor,
                tx: (gx - col as f64).clamp(0.0, 1.0),
                ty: (gy - row as f64).clamp(0.0, 1.0),
                tw: libm::log(b.w as f64 / aw as f64),
                th: libm::log(b.h as f64 / ah as f64),
            }
        })
        .collect();
    Targets { boxes: boxes.to_vec(), assignments }
}

/// Loss and `∂loss/∂raw` for one head tensor.
///
/// `λ_coord·Σ[(σ(tx)−tx*)² + (σ(ty)−ty*)² + (tw−tw*)² + (th−th*)²]`
/// `+ λ_obj·Σ(σ(to)−1)²` over responsible anchors, plus
/// `λ_noobj·Σσ(to)²` over the other anchors not ignored by IoU.
pub fn yolo_loss(raw: &Tensor, targets: &Targets, anchors: &AnchorSet, cfg: &LossConfig) -> (f64, Tensor) {
    let (rows, cols) = (raw.height, raw.width);
    let n_anchors = anchors.len();
    let plane = rows * cols;
    let idx = |a: usize, k: usize, r: usize, c: usize| (a * VALUES_PER_ANCHOR + k) * plane + r * cols + c;
    let mut responsible: Vec<Option<&TargetAssignment>> = alloc::vec![None; n_anchors * plane];
    for t in &targets.assignments {
        responsible[t.anchor * plane + t.row * cols + t.col] = Some(t);
    }
    let mut grad = Tensor::zeros(raw.channels, rows, cols);
    let mut loss = 0.0;
    for a in 0..n_anchors {
        let (aw, ah) = anchors.0[a];
        for r in 0..rows {
            for c in 0..cols {
                let v = |k| raw.data[idx(a, k, r, c)] as f64;
                let so = sigmoid64(v(4));
                if let Some(t) = responsible[a * plane + r * cols + c] {
                    let sx = sigmoid64(v(0));
                    let sy = sigmoid64(v(1));
                    let (dx, dy, dw, dh) = (sx - t.tx, sy - t.ty, v(2) - t.tw, v(3) - t.th);
                    loss += cfg.coord * (dx * dx + dy * dy + dw * dw + dh * dh);
                    loss += cfg.obj * (so - 1.0) * (so - 1.0);
                    grad.data[idx(a, 0, r, c)] = (2.0 * cfg.coord * dx * sx * (1.0 - sx)) as f32;
                    grad.data[idx(a, 1, r, c)] = (2.0 * cfg.coord * dy * sy * (1.0 - sy)) as f32;
                    grad.data[idx(a, 2, r, c)] = (2.0 * cfg.coord * dw) as f32;
                    grad.data[idx(a, 3, r, c)] = (2.0 * cfg.coord * dh) as f32;
                    grad.data[idx(a, 4, r, c)] = (2.0 * cfg.obj * (so - 1.0) * so * (1.0 - so)) as f32;
                } else {
                    if !targets.boxes.is_empty() {
                        let w = aw as f64 * libm::exp(v(2));
                        let h = ah as f64 * libm::exp(v(3));
                        let cx = (c as f64 + sigmoid64(v(0))) * CELL_SIZE as f64;
                        let cy = (r as f64 + sigmoid64(v(1))) * CELL_SIZE as f64;
                        let pred = Rect { x: (cx - w / 2.0) as f32, y: (cy - h / 2.0) as f32, w: w as f32, h: h as f32 };
                        let best = targets.boxes.iter().map(|b| iou(&pred, b)).fold(0.0f32, f32::max);
                        if best >= cfg.ignore_iou {
                            continue;
                        }
                    }
                    loss += cfg.noobj * so * so;
                    grad.data[idx(a, 4, r, c)] = (2.0 * cfg.noobj * so * so * (1.0 - so)) as f32;
                }
            }
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn logit(p: f64) -> f32 {
        libm::log(p / (1.0 - p)) as f32
    }

    #[test]
    fn empty_scene_with_confident_background_has_no_loss() {
        let mut raw = Tensor::zeros(25, 6, 8);
        for a in 0..5 {
            raw.channel_mut(a * 5 + 4).iter_mut().for_each(|v| *v = -40.0);
        }
        let (loss, _) = yolo_loss(&raw, &Targets::default(), &AnchorSet::default(), &LossConfig::default());
        assert!(loss < 1e-30);
    }

    #[test]
    fn perfect_prediction_has_no_loss() {
        let anchors = AnchorSet::default();
        let boxes = vec![Rect { x: 5.0, y: 6.0, w: 5.0, h: 6.5 }, Rect { x: 20.0, y: 10.0, w: 3.2, h: 4.0 }];
        let t = assign_targets(&boxes, &anchors, 6, 8);
        let mut raw = Tensor::zeros(25, 6, 8);
        for a in 0..5 {
            raw.channel_mut(a * 5 + 4).iter_mut().for_each(|v| *v = -40.0);
        }
        for s in &t.assignments {
            *raw.at_mut(s.anchor * 5, s.row, s.col) = logit(s.tx);
            *raw.at_mut(s.anchor * 5 + 1, s.row, s.col) = logit(s.ty);
            *raw.at_mut(s.anchor * 5 + 2, s.row, s.col) = s.tw as f32;
            *raw.at_mut(s.anchor * 5 + 3, s.row, s.col) = s.th as f32;
            *raw.at_mut(s.anchor * 5 + 4, s.row, s.col) = 40.0;
        }
        let (loss, _) = yolo_loss(&raw, &t, &anchors, &LossConfig::default());
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn assignment_picks_cell_and_anchor() {
        let anchors = AnchorSet(vec![(3.0, 3.0), (8.0, 12.0)]);
        let t = assign_targets(&[Rect { x: 4.0, y: 2.0, w: 8.0, h: 12.0 }], &anchors, 6, 8);
        let a = t.assignments[0];
        assert_eq!((a.row, a.col, a.anchor), (2, 2, 1));
        assert!((a.tx - 0.0).abs() < 1e-12 && (a.ty - 0.0).abs() < 1e-12);
        assert!(a.tw.abs() < 1e-12 && a.th.abs() < 1e-12);
    }
}
