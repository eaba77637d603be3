//! Detection metrics: greedy IoU matching, precision/recall sweep, all-point
//! interpolated AP and the F1-maximizing threshold.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::detect::{detection_order, iou, Detection, Rect};
use crate::error::{Error, Result};

pub const DEFAULT_MATCH_IOU: f32 = 0.5;

/// Matching outcome of one frame. Detections are listed in matching order
/// (descending score) with their TP flag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub detections: Vec<(f32, bool)>,
    pub num_gt: usize,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.1).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections.len() - self.true_positives()
    }
}

/// Each detection, in descending score order, claims the unmatched ground
/// truth it overlaps most if that IoU reaches `iou_threshold`.
pub fn match_frame(dets: &[Detection], gts: &[Rect], iou_threshold: f32) -> MatchResult {
    let mut order = dets.to_vec();
    order.sort_by(detection_order);
    let mut taken = vec![false; gts.len()];
    let mut detections = Vec::with_capacity(order.len());
    for d in &order {
        let r = d.rect();
        let mut best: Option<(usize, f32)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&r, gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        detections.push((d.score, best.is_some()));
    }
    let matched = taken.iter().filter(|&&t| t).count();
    MatchResult { detections, num_gt: gts.len(), false_negatives: gts.len() - matched }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f32,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        f1(self.precision, self.recall)
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Operating points at every distinct detection score, highest threshold
/// first (so recall is non-decreasing along `points`).
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestF1 {
    pub threshold: f32,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn pr_curve(matches: &[MatchResult]) -> Result<PrCurve> {
    let num_gt: usize = matches.iter().map(|m| m.num_gt).sum();
    if num_gt == 0 {
        return Err(Error::UndefinedMetric("no ground-truth boxes in the evaluation set".to_string()));
    }
    let mut all: Vec<(f32, bool)> = matches.iter().flat_map(|m| m.detections.iter().copied()).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / num_gt as f64,
        });
    }
    Ok(PrCurve { points, num_gt })
}

impl PrCurve {
    /// Area under the precision envelope (all-point interpolation).
    pub fn ap(&self) -> f64 {
        let mut envelope: Vec<f64> = self.points.iter().map(|p| p.precision).collect();
        for k in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[k] = envelope[k].max(envelope[k + 1]);
        }
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for (p, env) in self.points.iter().zip(&envelope) {
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
        ap
    }

    /// Highest F1 over the sweep; on ties the higher threshold wins.
    pub fn best_f1(&self) -> BestF1 {
        let mut best = BestF1 { threshold: 1.0, f1: 0.0, precision: 0.0, recall: 0.0 };
        for p in &self.points {
            let v = p.f1();
            if v > best.f1 {
                best = BestF1 { threshold: p.threshold, f1: v, precision: p.precision, recall: p.recall };
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub curve: PrCurve,
    pub ap: f64,
    pub best: BestF1,
}

/// Match every frame and summarize. `dets[i]` and `gts[i]` belong to frame `i`.
pub fn evaluate(dets: &[Vec<Detection>], gts: &[Vec<Rect>], iou_threshold: f32) -> Result<EvalSummary> {
    if dets.len() != gts.len() {
        return Err(Error::Dimension(alloc::format!("{} detection frames vs {} ground-truth frames", dets.len(), gts.len())));
    }
    let matches: Vec<MatchResult> = dets.iter().zip(gts).map(|(d, g)| match_frame(d, g, iou_threshold)).collect();
    let curve = pr_curve(&matches)?;
    Ok(EvalSummary { ap: curve.ap(), best: curve.best_f1(), curve })
}
