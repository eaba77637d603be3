//! Tabular outputs (CSV) and the PR plot (SVG).

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use tinytherm_core::arena::{plan_memory, plan_shapes};
use tinytherm_core::eval::{BestF1, PrCurve};
use tinytherm_core::graph::{LayerDesc, LayerKind, ModelGraph};
use tinytherm_core::prune::PruneRecord;
use tinytherm_core::quant::QuantizedModel;
use tinytherm_core::train::LogEntry;

use crate::container::ModelFile;
use crate::error::{Error, Result};

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TrainRow {
    iter: usize,
    lr: f64,
    train_loss: f64,
    val_loss: Option<f64>,
}

pub fn write_train_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    write_csv(path, log.iter().map(|e| TrainRow { iter: e.iter, lr: e.lr, train_loss: e.train_loss, val_loss: e.val_loss }))
}

#[derive(Serialize)]
struct PruneRow {
    iteration: usize,
    removed_filters: usize,
    prunable_filters: usize,
    params: usize,
    macs: u64,
    compression: f64,
    pruned_val_loss: Option<f64>,
    val_loss: Option<f64>,
    finetune_iters: usize,
    ap: Option<f64>,
    f1: Option<f64>,
}

/// One row per iteration; `compression` is `base_params / params`.
pub fn write_prune_ledger(path: &Path, base_params: usize, records: &[PruneRecord]) -> Result<()> {
    write_csv(
        path,
        records.iter().map(|r| PruneRow {
            iteration: r.iteration,
            removed_filters: r.removed.len(),
            prunable_filters: r.prunable_filters,
            params: r.params,
            macs: r.macs,
            compression: base_params as f64 / r.params as f64,
            pruned_val_loss: r.pruned_val_loss,
            val_loss: r.val_loss,
            finetune_iters: r.finetune_iters,
            ap: r.ap,
            f1: r.f1,
        }),
    )
}

#[derive(Serialize)]
struct PrRow {
    threshold: f32,
    precision: f64,
    recall: f64,
}

pub fn write_pr_curve(path: &Path, curve: &PrCurve) -> Result<()> {
    write_csv(path, curve.points.iter().map(|p| PrRow { threshold: p.threshold, precision: p.precision, recall: p.recall }))
}

/// Precision over recall with the best-F1 point marked.
pub fn pr_svg(curve: &PrCurve, best: &BestF1, ap: f64) -> String {
    const W: f64 = 480.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let x = |r: f64| M + r * (W - 2.0 * M);
    let y = |p: f64| H - M - p * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<path d="M{} {} V{} H{}" fill="none" stroke="black"/>"#, x(0.0), y(1.0), y(0.0), x(1.0));
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, x(v), y(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, x(0.0) - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">recall</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">precision</text>"#, H / 2.0, H / 2.0);
    let mut d = format!("M{:.2} {:.2}", x(0.0), y(curve.points.first().map_or(1.0, |p| p.precision)));
    for p in &curve.points {
        let _ = write!(d, " L{:.2} {:.2}", x(p.recall), y(p.precision));
    }
    let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="steelblue" stroke-width="2"/>"#);
    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="crimson"/>"#, x(best.recall), y(best.precision));
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}">AP {:.2}%  best F1 {:.2}% @ {:.3}</text>"#,
        x(0.02),
        y(1.0) - 10.0,
        ap * 100.0,
        best.f1 * 100.0,
        best.threshold
    );
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: usize,
    pub kind: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub params: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub precision: &'static str,
    pub layers: Vec<LayerRow>,
    pub params: usize,
    pub macs: u64,
    /// Activation arena at the model's own element size.
    pub arena_bytes: usize,
    pub weight_bytes: usize,
    /// Arena the same graph would need with int8 activations.
    pub int8_arena_bytes: usize,
}

fn kind_name(k: LayerKind) -> &'static str {
    match k {
        LayerKind::Conv3x3 => "conv3x3",
        LayerKind::Depthwise3x3 => "depthwise3x3",
        LayerKind::Pointwise1x1 => "pointwise1x1",
    }
}

fn layer_rows<'a>(descs: impl Iterator<Item = &'a LayerDesc>, mut h: usize, mut w: usize) -> Vec<LayerRow> {
    descs
        .enumerate()
        .map(|(i, d)| {
            let macs = d.macs(h, w);
            (h, w) = d.output_hw(h, w);
            LayerRow {
                layer: i,
                kind: kind_name(d.kind),
                in_channels: d.in_channels,
                out_channels: d.out_channels,
                stride: d.stride,
                out_height: h,
                out_width: w,
                params: d.param_count(),
                macs,
            }
        })
        .collect()
}

impl ModelReport {
    pub fn for_graph(g: &ModelGraph) -> Self {
        let plan = plan_memory(g, 4);
        Self {
            precision: "f32",
            layers: layer_rows(g.layers.iter().map(|l| &l.desc), g.input_height, g.input_width),
            params: g.count_params(),
            macs: g.count_macs(),
            arena_bytes: plan.arena_bytes,
            weight_bytes: plan.weight_bytes,
            int8_arena_bytes: plan_memory(g, 1).arena_bytes,
        }
    }

    pub fn for_int8(q: &QuantizedModel) -> Self {
        let plan = q.memory_plan();
        let layers = layer_rows(q.layers.iter().map(|l| &l.desc), q.input_height, q.input_width);
        Self {
            precision: "int8",
            params: q.count_params(),
            macs: layers.iter().map(|r| r.macs).sum(),
            layers,
            arena_bytes: plan.arena_bytes,
            weight_bytes: plan.weight_bytes,
            int8_arena_bytes: plan_shapes(&q.tensor_shapes(), 1).1,
        }
    }

    pub fn for_model(m: &ModelFile) -> Self {
        match m {
            ModelFile::F32(g) => Self::for_graph(g),
            ModelFile::Int8(q) => Self::for_int8(q),
        }
    }

    /// Fixed-width table for the terminal.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>5}  {:<13} {:>6} {:>6} {:>6} {:>7} {:>10} {:>12}\n",
            "layer", "kind", "in", "out", "stride", "output", "params", "MACs"
        );
        for r in &self.layers {
            let _ = writeln!(
                s,
                "{:>5}  {:<13} {:>6} {:>6} {:>6} {:>7} {:>10} {:>12}",
                r.layer,
                r.kind,
                r.in_channels,
                r.out_channels,
                r.stride,
                format!("{}x{}", r.out_width, r.out_height),
                r.params,
                r.macs
            );
        }
        let _ = writeln!(s, "total params        {}", self.params);
        let _ = writeln!(s, "total MACs          {}", self.macs);
        let _ = writeln!(s, "weight bytes        {} ({})", self.weight_bytes, self.precision);
        let _ = writeln!(s, "activation arena    {} bytes ({})", self.arena_bytes, self.precision);
        let _ = writeln!(s, "int8 arena          {} bytes", self.int8_arena_bytes);
        s
    }

    /// Per-layer rows followed by a `total` row carrying the memory figures.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            layer: String,
            kind: &'a str,
            in_channels: Option<usize>,
            out_channels: Option<usize>,
            stride: Option<usize>,
            params: usize,
            macs: u64,
            arena_bytes: Option<usize>,
            weight_bytes: Option<usize>,
        }
        let rows = self
            .layers
            .iter()
            .map(|r| Row {
                layer: r.layer.to_string(),
                kind: r.kind,
                in_channels: Some(r.in_channels),
                out_channels: Some(r.out_channels),
                stride: Some(r.stride),
                params: r.params,
                macs: r.macs,
                arena_bytes: None,
                weight_bytes: None,
            })
            .chain(std::iter::once(Row {
                layer: "total".into(),
                kind: self.precision,
                in_channels: None,
                out_channels: None,
                stride: None,
                params: self.params,
                macs: self.macs,
                arena_bytes: Some(self.arena_bytes),
                weight_bytes: Some(self.weight_bytes),
            }));
        write_csv(path, rows)
    }
}
