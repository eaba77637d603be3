//! Iterative structured channel pruning.
//!
//! Filters are ranked globally by normalized L2 norm, `‖w‖₂ / √len(w)`, so
//! 3×3×C and 1×1×C filters are comparable. The prunable filters are the
//! outputs of the first conv and of every pointwise conv except the head;
//! a depthwise channel is removed together with the filter that feeds it.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::train::{train, LrPolicy, Sample, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterScore {
    pub layer: usize,
    pub channel: usize,
    pub score: f64,
}

/// Normalized L2 norm of every prunable filter, in layer/channel order.
pub fn saliency(graph: &ModelGraph) -> Vec<FilterScore> {
    let mut out = Vec::new();
    for l in graph.prunable_layers() {
        let layer = &graph.layers[l];
        let per = layer.desc.weights_per_filter();
        for c in 0..layer.desc.out_channels {
            let w = &layer.weights[c * per..(c + 1) * per];
            let sq: f64 = w.iter().map(|&v| v as f64 * v as f64).sum();
            out.push(FilterScore { layer: l, channel: c, score: libm::sqrt(sq) / libm::sqrt(per as f64) });
        }
    }
    out
}

/// Ascending score, ties broken by `(layer, channel)`.
pub fn removal_order(scores: &[FilterScore]) -> Vec<FilterScore> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.layer.cmp(&b.layer)).then(a.channel.cmp(&b.channel)));
    s
}

/// Number of filters one step removes: `⌊fraction · total⌋`, at least one.
pub fn filters_to_remove(total: usize, fraction: f64) -> usize {
    (libm::floor(fraction * total as f64) as usize).max(1)
}

fn retain_rows(weights: &[f32], row_len: usize, keep: &[usize]) -> Vec<f32> {
    keep.iter().flat_map(|&r| weights[r * row_len..(r + 1) * row_len].iter().copied()).collect()
}

fn retain_columns(weights: &[f32], rows: usize, cols: usize, keep: &[usize]) -> Vec<f32> {
    (0..rows).flat_map(|r| keep.iter().map(move |&c| weights[r * cols + c])).collect()
}

/// Drop output channels `remove` of prunable layer `l` and the slices that
/// depend on them downstream.
pub fn remove_channels(graph: &mut ModelGraph, l: usize, remove: &[usize]) -> Result<()> {
    let out_c = graph.layers[l].desc.out_channels;
    let keep: Vec<usize> = (0..out_c).filter(|c| !remove.contains(c)).collect();
    if keep.is_empty() {
        bail!(PruneRefused, "layer {} would have no output channels left", l);
    }
    if l + 1 >= graph.layers.len() {
        bail!(PruneRefused, "the head's outputs are fixed");
    }
    slice_outputs(graph, l, &keep);
    let mut next = l + 1;
    if graph.layers[next].desc.kind == LayerKind::Depthwise3x3 {
        slice_outputs(graph, next, &keep);
        graph.layers[next].desc.in_channels = keep.len();
        next += 1;
    }
    let consumer = &mut graph.layers[next];
    match consumer.desc.kind {
        LayerKind::Pointwise1x1 => {
            consumer.weights = retain_columns(&consumer.weights, consumer.desc.out_channels, consumer.desc.in_channels, &keep);
        }
        LayerKind::Conv3x3 => {
            let (o, i) = (consumer.desc.out_channels, consumer.desc.in_channels);
            let w = &consumer.weights;
            let mut sliced = Vec::with_capacity(o * keep.len() * 9);
            for r in 0..o {
                for &c in &keep {
                    let base = (r * i + c) * 9;
                    sliced.extend_from_slice(&w[base..base + 9]);
                }
            }
            consumer.weights = sliced;
        }
        LayerKind::Depthwise3x3 => bail!(Structure, "depthwise layer {} follows another depthwise layer", next),
    }
    consumer.desc.in_channels = keep.len();
    graph.validate()
}

fn slice_outputs(graph: &mut ModelGraph, l: usize, keep: &[usize]) {
    let layer = &mut graph.layers[l];
    let per = layer.desc.weights_per_filter();
    layer.weights = retain_rows(&layer.weights, per, keep);
    if !layer.bias.is_empty() {
        layer.bias = keep.iter().map(|&c| layer.bias[c]).collect();
    }
    if let Some(bn) = &layer.bn {
        layer.bn = Some(bn.retain(keep));
    }
    layer.desc.out_channels = keep.len();
}

/// Remove the lowest-saliency `filters_to_remove(total, fraction)` filters.
/// A filter is skipped if taking it would empty its layer; if not enough
/// filters can be removed the step is refused.
pub fn prune_step(graph: &ModelGraph, fraction: f64) -> Result<(ModelGraph, Vec<(usize, usize)>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        bail!(Config, "pruning fraction must lie in (0, 1), got {}", fraction);
    }
    let total = graph.prunable_filter_count();
    let target = filters_to_remove(total, fraction);
    let mut remaining: BTreeMap<usize, usize> =
        graph.prunable_layers().into_iter().map(|l| (l, graph.layers[l].desc.out_channels)).collect();
    let mut chosen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut count = 0;
    for f in removal_order(&saliency(graph)) {
        if count == target {
            break;
        }
        let left = remaining.get_mut(&f.layer).unwrap();
        if *left <= 1 {
            continue;
        }
        *left -= 1;
        chosen.entry(f.layer).or_default().push(f.channel);
        count += 1;
    }
    if count < target {
        bail!(PruneRefused, "only {} of {} filters can be removed without emptying a layer", count, target);
    }
    let mut pruned = graph.clone();
    for (&l, channels) in &chosen {
        remove_channels(&mut pruned, l, channels)?;
    }
    let removed = chosen.into_iter().flat_map(|(l, cs)| cs.into_iter().map(move |c| (l, c))).collect();
    Ok((pruned, removed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    pub fraction_per_iter: f64,
    /// Fine-tuning is skipped or stopped once `L_curr ≤ loss_tolerance · L_start`.
    pub loss_tolerance: f64,
    pub max_iterations: usize,
    pub finetune_max_iters: usize,
    pub finetune_lr: f64,
    pub finetune_lr_drop_at: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            fraction_per_iter: 0.05,
            loss_tolerance: 1.03,
            max_iterations: 60,
            finetune_max_iters: 10_000,
            finetune_lr: 0.0001,
            finetune_lr_drop_at: 5000,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction_per_iter > 0.0 && self.fraction_per_iter < 1.0) {
            bail!(Config, "fraction_per_iter must lie in (0, 1)");
        }
        if !(self.loss_tolerance >= 1.0) {
            bail!(Config, "loss_tolerance must be at least 1");
        }
        Ok(())
    }
}

/// One row of the campaign ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneRecord {
    pub iteration: usize,
    pub removed: Vec<(usize, usize)>,
    pub prunable_filters: usize,
    pub params: usize,
    pub macs: u64,
    /// Validation loss right after pruning, before any fine-tuning.
    pub pruned_val_loss: Option<f64>,
    /// Validation loss of the weights carried into the next iteration.
    pub val_loss: Option<f64>,
    pub finetune_iters: usize,
    pub ap: Option<f64>,
    pub f1: Option<f64>,
}

/// What a campaign needs beyond the graph: a validation loss and a way to
/// fine-tune. `None` runs a structural-only campaign.
pub trait PruneObjective {
    fn val_loss(&mut self, graph: &ModelGraph) -> Result<f64>;

    /// Fine-tune, stopping once validation loss reaches `target`. Returns the
    /// lowest-validation-loss weights, their loss and the iterations run.
    fn fine_tune(&mut self, graph: ModelGraph, target: f64, cfg: &PruneConfig) -> Result<(ModelGraph, f64, usize)>;

    /// Optional accuracy columns `(AP, F1)` for the ledger.
    fn score(&mut self, _graph: &ModelGraph) -> Result<Option<(f64, f64)>> {
        Ok(None)
    }
}

/// Fine-tunes with the regular trainer on fixed datasets.
pub struct TrainingObjective<'a> {
    pub train_set: &'a [Sample],
    pub val_set: &'a [Sample],
    pub train_cfg: TrainConfig,
}

impl PruneObjective for TrainingObjective<'_> {
    fn val_loss(&mut self, graph: &ModelGraph) -> Result<f64> {
        crate::train::evaluate_loss(graph, self.val_set, &self.train_cfg.loss)
    }

    fn fine_tune(&mut self, graph: ModelGraph, target: f64, cfg: &PruneConfig) -> Result<(ModelGraph, f64, usize)> {
        let tc = TrainConfig {
            max_iters: cfg.finetune_max_iters,
            base_lr: cfg.finetune_lr,
            policy: LrPolicy::Step { drop_at: cfg.finetune_lr_drop_at, factor: 10.0 },
            stop_at_val_loss: Some(target),
            ..self.train_cfg.clone()
        };
        let out = train(graph, self.train_set, self.val_set, &tc)?;
        Ok((out.best, out.best_val_loss, out.iterations))
    }
}

/// Run up to `cfg.max_iterations` prune/fine-tune rounds. `checkpoint` sees
/// every record together with the weights carried forward. The campaign ends
/// early only when no further filter can be removed.
pub fn prune_campaign(
    model: ModelGraph,
    mut objective: Option<&mut dyn PruneObjective>,
    cfg: &PruneConfig,
    mut checkpoint: impl FnMut(&PruneRecord, &ModelGraph) -> Result<()>,
) -> Result<(ModelGraph, Vec<PruneRecord>)> {
    cfg.validate()?;
    let start_loss = match objective.as_deref_mut() {
        Some(o) => Some(o.val_loss(&model)?),
        None => None,
    };
    let mut graph = model;
    let mut records = Vec::new();
    for iteration in 1..=cfg.max_iterations {
        let (pruned, removed) = match prune_step(&graph, cfg.fraction_per_iter) {
            Ok(p) => p,
            Err(crate::Error::PruneRefused(_)) => break,
            Err(e) => return Err(e),
        };
        let mut record = PruneRecord {
            iteration,
            removed,
            prunable_filters: pruned.prunable_filter_count(),
            params: pruned.count_params(),
            macs: pruned.count_macs(),
            pruned_val_loss: None,
            val_loss: None,
            finetune_iters: 0,
            ap: None,
            f1: None,
        };
        graph = pruned;
        if let (Some(o), Some(l_start)) = (objective.as_deref_mut(), start_loss) {
            let target = cfg.loss_tolerance * l_start;
            let current = o.val_loss(&graph)?;
            record.pruned_val_loss = Some(current);
            record.val_loss = Some(current);
            if current > target {
                let (tuned, loss, iters) = o.fine_tune(graph, target, cfg)?;
                graph = tuned;
                record.val_loss = Some(loss);
                record.finetune_iters = iters;
            }
            if let Some((ap, f1)) = o.score(&graph)? {
                record.ap = Some(ap);
                record.f1 = Some(f1);
            }
        }
        checkpoint(&record, &graph)?;
        records.push(record);
    }
    Ok((graph, records))
}
