//! Static activation arena planning for sequential execution.
//!
//! Tensor `k` is the graph input (`k = 0`) or the output of layer `k - 1`.
//! It is live during the execution steps that produce or consume it, so at
//! step `s` only tensors `s` and `s + 1` are live. Placement is greedy by
//! decreasing size at the lowest aligned offset that avoids every already
//! placed tensor with an overlapping lifetime.

use alloc::vec::Vec;

use crate::graph::ModelGraph;

/// Offsets are word aligned.
pub const ARENA_ALIGN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSlot {
    pub offset: usize,
    pub bytes: usize,
    /// First and last execution step (inclusive) during which the tensor is live.
    pub first_step: usize,
    pub last_step: usize,
}

impl TensorSlot {
    fn lifetime_overlaps(&self, other: &TensorSlot) -> bool {
        self.first_step <= other.last_step && other.first_step <= self.last_step
    }

    fn range_overlaps(&self, other: &TensorSlot) -> bool {
        self.offset < other.offset + other.bytes && other.offset < self.offset + self.bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArenaPlan {
    pub tensors: Vec<TensorSlot>,
    pub arena_bytes: usize,
    /// Deployable parameter storage: weights at the element width plus one
    /// 4-byte bias per output channel (batch norm folded).
    pub weight_bytes: usize,
}

impl ArenaPlan {
    /// Pairs of tensors that are live at the same step and share bytes.
    pub fn conflicts(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.tensors.len() {
            for j in i + 1..self.tensors.len() {
                let (a, b) = (&self.tensors[i], &self.tensors[j]);
                if a.bytes > 0 && b.bytes > 0 && a.lifetime_overlaps(b) && a.range_overlaps(b) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

fn align(n: usize) -> usize {
    n.div_ceil(ARENA_ALIGN) * ARENA_ALIGN
}

/// Plan a chain of tensors with the given byte sizes.
pub fn plan_chain(sizes: &[usize]) -> Vec<TensorSlot> {
    let steps = sizes.len().saturating_sub(1).max(1);
    let mut slots: Vec<TensorSlot> = sizes
        .iter()
        .enumerate()
        .map(|(k, &bytes)| TensorSlot {
            offset: 0,
            bytes,
            first_step: k.saturating_sub(1),
            last_step: k.min(steps - 1),
        })
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut placed: Vec<usize> = Vec::new();
    for &k in &order {
        let mut blockers: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&p| slots[p].lifetime_overlaps(&slots[k]))
            .map(|&p| (slots[p].offset, slots[p].offset + slots[p].bytes))
            .collect();
        blockers.sort_unstable();
        let mut offset = 0;
        for (start, end) in blockers {
            if offset + slots[k].bytes <= start {
                break;
            }
            offset = offset.max(align(end));
        }
        slots[k].offset = offset;
        placed.push(k);
    }
    slots
}

/// Plan a chain of `(channels, height, width)` tensors at `element_bytes`
/// per value. Returns the slots and the arena size.
pub fn plan_shapes(shapes: &[(usize, usize, usize)], element_bytes: usize) -> (Vec<TensorSlot>, usize) {
    let sizes: Vec<usize> = shapes.iter().map(|&(c, h, w)| c * h * w * element_bytes).collect();
    let tensors = plan_chain(&sizes);
    let arena_bytes = tensors.iter().map(|t| t.offset + t.bytes).max().unwrap_or(0);
    (tensors, arena_bytes)
}

/// Arena for `graph` and the bytes of its stored weights: `element_bytes`
/// per weight plus a 4-byte bias per output channel (batch norm folded).
pub fn plan_memory(graph: &ModelGraph, element_bytes: usize) -> ArenaPlan {
    let (tensors, arena_bytes) = plan_shapes(&graph.tensor_shapes(), element_bytes);
    let weight_bytes = graph
        .layers
        .iter()
        .map(|l| l.desc.weight_count() * element_bytes + 4 * l.desc.out_channels)
        .sum();
    ArenaPlan { tensors, arena_bytes, weight_bytes }
}
