//! On-disk dataset layout:
//!
//! ```text
//! <root>/<split>/seq_000/frame_000000.tiff
//!                        frame_000001.tiff
//!                        annotations.jsonl
//! ```
//!
//! Frames are numbered contiguously from 0 within a sequence and an
//! annotation's `frame_index` is that number.

use std::path::{Path, PathBuf};

use tinytherm_core::{GroundTruthBox, ThermalFrame};

use crate::error::{Error, Result};
use crate::jsonl::{read_annotations, write_annotations};
use crate::tiff::{read_frame, write_frame};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub dir: PathBuf,
    pub frames: Vec<ThermalFrame>,
    pub boxes: Vec<GroundTruthBox>,
    /// False when the directory had no annotation file.
    pub annotated: bool,
}

pub fn sequence_dir(root: &Path, split: &str, index: usize) -> PathBuf {
    root.join(split).join(format!("seq_{index:03}"))
}

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.tiff")
}

fn frame_number(name: &str) -> Option<u64> {
    let stem = name.strip_prefix("frame_")?;
    let digits = stem.strip_suffix(".tiff").or_else(|| stem.strip_suffix(".tif"))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn read_dir_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    Ok(names)
}

pub fn write_sequence(dir: &Path, frames: &[ThermalFrame], boxes: &[GroundTruthBox]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_frame(&dir.join(frame_file_name(i as u64)), f)?;
    }
    write_annotations(&dir.join(ANNOTATIONS_FILE), boxes)
}

/// Frame paths of a sequence directory in order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut numbered: Vec<(u64, String)> = read_dir_names(dir)?.into_iter().filter_map(|n| frame_number(&n).map(|i| (i, n))).collect();
    numbered.sort();
    for (expect, (got, name)) in numbered.iter().enumerate() {
        if *got != expect as u64 {
            return Err(Error::Format(format!("{}: expected frame {expect}, found {name}", dir.display())));
        }
    }
    Ok(numbered.into_iter().map(|(_, n)| dir.join(n)).collect())
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let frames = frame_paths(dir)?
        .iter()
        .enumerate()
        .map(|(i, p)| read_frame(p, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let ann = dir.join(ANNOTATIONS_FILE);
    let annotated = ann.is_file();
    let boxes = if annotated { read_annotations(&ann)? } else { Vec::new() };
    tinytherm_core::frame::boxes_per_frame(&boxes, frames.len())?;
    Ok(Sequence { dir: dir.to_path_buf(), frames, boxes, annotated })
}

/// Sequence directories of a split, sorted by name.
pub fn list_sequences(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    Ok(read_dir_names(&dir)?.into_iter().filter(|n| n.starts_with("seq_")).map(|n| dir.join(n)).filter(|p| p.is_dir()).collect())
}

pub fn load_split(root: &Path, split: &str) -> Result<Vec<Sequence>> {
    let seqs = list_sequences(root, split)?.iter().map(|d| read_sequence(d)).collect::<Result<Vec<_>>>()?;
    if seqs.is_empty() {
        return Err(Error::Format(format!("{} holds no seq_* directories", root.join(split).display())));
    }
    Ok(seqs)
}
