//! Hand-written training: YOLO loss, SGD with momentum and weight decay,
//! warm-up plus reduce-on-plateau, augmentation, and checkpoint selection
//! by validation loss.

pub mod augment;
pub mod backprop;
pub mod loss;
pub mod schedule;

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::detect::Rect;
use crate::error::{bail, Error, Result};
use crate::frame::{boxes_per_frame, GroundTruthBox, ThermalFrame};
use crate::graph::ModelGraph;
use crate::infer::forward;
use crate::preprocess::{InputSpec, Preprocessor};

pub use augment::{augment, AugmentConfig, Sample};
pub use backprop::{backward, forward_train, Gradients};
pub use loss::{assign_targets, yolo_loss, LossConfig, TargetAssignment, Targets};
pub use schedule::{lr_schedule, LrPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub base_lr: f64,
    pub policy: LrPolicy,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Validate (and possibly checkpoint) every this many iterations.
    pub val_every: usize,
    /// Stop as soon as a validation loss is at or below this value.
    pub stop_at_val_loss: Option<f64>,
    /// Momentum of the running batch-norm statistics.
    pub bn_momentum: f64,
    pub loss: LossConfig,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            base_lr: 0.001,
            policy: LrPolicy::WarmupPlateau {
                warmup_iters: 1000,
                warmup_start_factor: 0.01,
                patience: 5000,
                decay_factor: 10.0,
            },
            weight_decay: 0.03,
            momentum: 0.9,
            batch_size: 32,
            val_every: 1000,
            stop_at_val_loss: None,
            bn_momentum: 0.1,
            loss: LossConfig::default(),
            augment: Some(AugmentConfig::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.batch_size == 0 || self.val_every == 0 {
            bail!(Config, "iteration counts and batch size must be positive");
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            bail!(Config, "learning rate must be positive, weight decay non-negative, momentum in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub best: ModelGraph,
    pub best_val_loss: f64,
    pub log: Vec<LogEntry>,
    /// Iterations actually run.
    pub iterations: usize,
}

/// Turn labelled sequences into training samples. Ground-truth boxes drive
/// the background model, exactly as detections do at inference.
pub fn prepare_sequence(frames: &[ThermalFrame], boxes: &[GroundTruthBox], spec: &InputSpec) -> Result<Vec<Sample>> {
    let per_frame = boxes_per_frame(boxes, frames.len())?;
    let mut pre = Preprocessor::new(*spec)?;
    let kinds = spec.channel_kinds();
    let mut out = Vec::new();
    for (frame, gts) in frames.iter().zip(&per_frame) {
        let rects: Vec<Rect> = gts.iter().map(GroundTruthBox::rect).collect();
        if let Some(input) = pre.push(frame)? {
            out.push(Sample { input, boxes: rects.clone(), kinds: kinds.clone(), frame_index: frame.index });
            pre.feedback(&rects)?;
        }
    }
    Ok(out)
}

pub fn targets_for(graph: &ModelGraph, boxes: &[Rect]) -> Targets {
    let (_, rows, cols) = graph.output_shape();
    assign_targets(boxes, &graph.anchors, rows, cols)
}

/// Mean per-sample loss with inference-mode batch norm.
pub fn evaluate_loss(graph: &ModelGraph, samples: &[Sample], loss: &LossConfig) -> Result<f64> {
    if samples.is_empty() {
        bail!(Config, "cannot evaluate loss on an empty set");
    }
    let mut total = 0.0;
    for s in samples {
        let raw = forward(graph, &s.input)?;
        total += yolo_loss(&raw, &targets_for(graph, &s.boxes), &graph.anchors, loss).0;
    }
    Ok(total / samples.len() as f64)
}

/// Loss and parameter gradients of one batch (training-mode batch norm).
/// The loss is the mean over the batch.
pub fn batch_gradients(graph: &ModelGraph, batch: &[Sample], loss: &LossConfig) -> Result<(f64, Gradients, backprop::ForwardCache)> {
    let inputs: Vec<_> = batch.iter().map(|s| s.input.clone()).collect();
    let (outputs, cache) = forward_train(graph, &inputs)?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads_out = Vec::with_capacity(batch.len());
    for (raw, s) in outputs.iter().zip(batch) {
        let (l, mut g) = yolo_loss(raw, &targets_for(graph, &s.boxes), &graph.anchors, loss);
        total += l;
        g.data.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
        grads_out.push(g);
    }
    let grads = backward(graph, &cache, grads_out);
    Ok((total / n, grads, cache))
}

/// SGD with momentum and L2 weight decay on every trainable parameter:
/// `v ← μv + (g + d·w)`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Gradients,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(graph: &ModelGraph, momentum: f64, weight_decay: f64) -> Self {
        Self { velocity: Gradients::zeros_like(graph), momentum, weight_decay }
    }

    pub fn step(&mut self, graph: &mut ModelGraph, grads: &Gradients, lr: f64) {
        let (mu, d) = (self.momentum, self.weight_decay);
        let update = |w: &mut [f32], g: &[f64], v: &mut [f64]| {
            for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + d * *w as f64;
                *w = (*w as f64 - lr * *v) as f32;
            }
        };
        for ((layer, g), v) in graph.layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity.layers) {
            update(&mut layer.weights, &g.weights, &mut v.weights);
            update(&mut layer.bias, &g.bias, &mut v.bias);
            if let Some(bn) = &mut layer.bn {
                update(&mut bn.gamma, &g.gamma, &mut v.gamma);
                update(&mut bn.beta, &g.beta, &mut v.beta);
            }
        }
    }
}

fn update_running_stats(graph: &mut ModelGraph, cache: &backprop::ForwardCache, momentum: f64) {
    for (layer, stats) in graph.layers.iter_mut().zip(cache.batch_stats()) {
        let (Some(bn), Some(s)) = (&mut layer.bn, stats) else { continue };
        let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
        for c in 0..bn.channels() {
            bn.mean[c] = ((1.0 - momentum) * bn.mean[c] as f64 + momentum * s.mean[c]) as f32;
            bn.var[c] = ((1.0 - momentum) * bn.var[c] as f64 + momentum * s.var[c] * unbias) as f32;
        }
    }
}

/// Deterministic epoch-shuffled batch order.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self { order: (0..n).collect(), pos: n, rng };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        for i in (1..self.order.len()).rev() {
            let j = (self.rng.next_u64() % (i as u64 + 1)) as usize;
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Train `graph` and return the checkpoint with the lowest validation loss.
/// Single-threaded and fully determined by `cfg.seed`.
pub fn train(graph: ModelGraph, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        bail!(Config, "training and validation sets must be non-empty");
    }
    let mut graph = graph;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = BatchSampler::new(train_set.len(), ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    let mut sgd = Sgd::new(&graph, cfg.momentum, cfg.weight_decay);
    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut log = Vec::new();
    let mut best_val = evaluate_loss(&graph, val_set, &cfg.loss)?;
    let mut best = graph.clone();
    history.push((0, best_val));
    log.push(LogEntry { iter: 0, lr: 0.0, train_loss: f64::NAN, val_loss: Some(best_val) });
    if cfg.stop_at_val_loss.is_some_and(|t| best_val <= t) {
        return Ok(TrainOutcome { best, best_val_loss: best_val, log, iterations: 0 });
    }
    let mut iterations = 0;
    for iter in 0..cfg.max_iters {
        let lr = lr_schedule(iter, cfg.base_lr, &cfg.policy, &history);
        let batch: Vec<Sample> = sampler
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| match &cfg.augment {
                Some(a) => augment(&train_set[i], a, &mut rng),
                None => train_set[i].clone(),
            })
            .collect();
        let (loss, grads, cache) = batch_gradients(&graph, &batch, &cfg.loss)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iter, loss });
        }
        update_running_stats(&mut graph, &cache, cfg.bn_momentum);
        sgd.step(&mut graph, &grads, lr);
        iterations = iter + 1;
        let validate = iterations % cfg.val_every == 0 || iterations == cfg.max_iters;
        let val_loss = if validate { Some(evaluate_loss(&graph, val_set, &cfg.loss)?) } else { None };
        log.push(LogEntry { iter: iterations, lr, train_loss: loss, val_loss });
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Diverged { iter: iterations, loss: v });
            }
            history.push((iterations, v));
            if v < best_val {
                best_val = v;
                best = graph.clone();
            }
            if cfg.stop_at_val_loss.is_some_and(|t| v <= t) {
                break;
            }
        }
    }
    Ok(TrainOutcome { best, best_val_loss: best_val, log, iterations })
}

/// Run one SGD step with an all-zero data gradient (exposes pure weight decay).
pub fn decay_only_step(graph: &mut ModelGraph, lr: f64, weight_decay: f64) {
    let zeros = Gradients::zeros_like(graph);
    Sgd::new(graph, 0.9, weight_decay).step(graph, &zeros, lr);
}
