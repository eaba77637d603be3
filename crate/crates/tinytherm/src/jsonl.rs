//! JSON-lines annotations and detections: one object per line.
//!
//! Annotation: `{"frame_index":0,"x":2.0,"y":3.0,"w":4.0,"h":5.0}` with a
//! top-left corner in pixels. Detection adds `"score"`. Blank lines are
//! skipped; writing emits exactly one compact object per line.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tinytherm_core::detect::Detection;
use tinytherm_core::{GroundTruthBox, FRAME_HEIGHT, FRAME_WIDTH};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BoxRecord {
    frame_index: u64,
    x: f32,
    y: f32,
    w: f32,
    h: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: u64,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
}

impl DetectionRecord {
    pub fn new(frame_index: u64, d: &Detection) -> Self {
        let r = d.rect();
        Self { frame_index, x: r.x, y: r.y, w: r.w, h: r.h, score: d.score }
    }

    pub fn detection(&self) -> Detection {
        Detection { cx: self.x + self.w / 2.0, cy: self.y + self.h / 2.0, w: self.w, h: self.h, score: self.score }
    }
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map(|v| (i + 1, v)).map_err(|e| Error::Format(format!("{what} line {}: {e}", i + 1))))
        .collect()
}

fn write_lines<T: Serialize>(out: &mut impl Write, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, &item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse annotations, validating every box against the 32×24 frame.
pub fn parse_annotations(text: &str) -> Result<Vec<GroundTruthBox>> {
    parse_lines::<BoxRecord>(text, "annotation")?
        .into_iter()
        .map(|(line, r)| {
            let b = GroundTruthBox { frame_index: r.frame_index, x: r.x, y: r.y, w: r.w, h: r.h };
            b.validate(FRAME_WIDTH, FRAME_HEIGHT).map_err(|e| match e {
                tinytherm_core::Error::Validation(m) => tinytherm_core::Error::Validation(format!("annotation line {line}: {m}")),
                other => other,
            })?;
            Ok(b)
        })
        .collect()
}

pub fn format_annotations(boxes: &[GroundTruthBox]) -> String {
    let mut out = Vec::new();
    let records = boxes.iter().map(|b| BoxRecord { frame_index: b.frame_index, x: b.x, y: b.y, w: b.w, h: b.h });
    write_lines(&mut out, records).expect("writing to memory");
    String::from_utf8(out).expect("JSON is UTF-8")
}

pub fn read_annotations(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn write_annotations(path: &Path, boxes: &[GroundTruthBox]) -> Result<()> {
    std::fs::write(path, format_annotations(boxes)).map_err(|e| Error::io(path, e))
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let recs = parse_lines::<DetectionRecord>(text, "detection")?;
    for (line, r) in &recs {
        let finite = [r.x, r.y, r.w, r.h, r.score].iter().all(|v| v.is_finite());
        if !finite || r.w <= 0.0 || r.h <= 0.0 || !(0.0..=1.0).contains(&r.score) {
            return Err(tinytherm_core::Error::Validation(format!("detection line {line}: degenerate box or score outside [0, 1]")).into());
        }
    }
    Ok(recs.into_iter().map(|(_, r)| r).collect())
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in std::io::BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_detections(&text)
}

pub fn write_detections(out: &mut impl Write, records: &[DetectionRecord]) -> std::io::Result<()> {
    write_lines(out, records)
}
