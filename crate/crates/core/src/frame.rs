//! Thermal frames, normalized network inputs and ground-truth boxes.

use alloc::vec::Vec;

use crate::detect::Rect;
use crate::error::{bail, Result};

pub const FRAME_WIDTH: usize = 32;
pub const FRAME_HEIGHT: usize = 24;

/// Physical range of the sensor in °C.
pub const MIN_TEMP_C: f32 = -40.0;
pub const MAX_TEMP_C: f32 = 300.0;

/// Default normalization window: indoor ambient through body temperature.
pub const DEFAULT_NORM_LO: f32 = 15.0;
pub const DEFAULT_NORM_HI: f32 = 40.0;

/// Stored frames hold °C multiplied by this factor as unsigned 16-bit values.
pub const RAW_SCALE: f32 = 100.0;

/// One sensor frame in degrees Celsius, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFrame {
    pub width: usize,
    pub height: usize,
    pub temps: Vec<f32>,
    pub index: u64,
}

impl ThermalFrame {
    pub fn new(width: usize, height: usize, temps: Vec<f32>, index: u64) -> Result<Self> {
        if temps.len() != width * height {
            bail!(Dimension, "frame {}x{} needs {} temperatures, got {}", width, height, width * height, temps.len());
        }
        if let Some(t) = temps.iter().find(|t| !t.is_finite() || **t < MIN_TEMP_C || **t > MAX_TEMP_C) {
            bail!(Validation, "temperature {} outside sensor range [{}, {}]", t, MIN_TEMP_C, MAX_TEMP_C);
        }
        Ok(Self { width, height, temps, index })
    }

    /// Constant frame, used for empty scenes and tests.
    pub fn filled(width: usize, height: usize, temp: f32, index: u64) -> Self {
        Self { width, height, temps: alloc::vec![temp; width * height], index }
    }

    /// Decode raw sensor counts (°C × 100).
    pub fn from_raw(width: usize, height: usize, raw: &[u16], index: u64) -> Result<Self> {
        let temps = raw.iter().map(|&r| r as f32 / RAW_SCALE).collect();
        Self::new(width, height, temps, index)
    }

    /// Encode as raw counts. Values below 0 °C saturate at 0 since the
    /// storage format is unsigned.
    pub fn to_raw(&self) -> Vec<u16> {
        self.temps
            .iter()
            .map(|&t| libm::round((t * RAW_SCALE) as f64).clamp(0.0, u16::MAX as f64) as u16)
            .collect()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.temps[y * self.width + x]
    }
}

/// Network-ready image with every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl NormalizedImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            bail!(Dimension, "image {}x{} needs {} values, got {}", width, height, width * height, values.len());
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            bail!(Validation, "normalized image values must lie in [0, 1]");
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, values: alloc::vec![value; width * height] }
    }

    pub fn same_shape(&self, other: &NormalizedImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Signed difference image with values in [-1, 1]; produced by background
/// subtraction and frame differencing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

/// Fixed affine temperature normalization `clamp((t - lo) / (hi - lo), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    lo: f32,
    hi: f32,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { lo: DEFAULT_NORM_LO, hi: DEFAULT_NORM_HI }
    }
}

impl Normalizer {
    pub fn new(lo: f32, hi: f32) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            bail!(Config, "normalization window requires lo < hi, got lo={} hi={}", lo, hi);
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f32 {
        self.lo
    }

    pub fn hi(&self) -> f32 {
        self.hi
    }

    #[inline]
    pub fn apply(&self, t: f32) -> f32 {
        ((t - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    pub fn normalize(&self, frame: &ThermalFrame) -> NormalizedImage {
        NormalizedImage {
            width: frame.width,
            height: frame.height,
            values: frame.temps.iter().map(|&t| self.apply(t)).collect(),
        }
    }
}

pub fn normalize(frame: &ThermalFrame, lo: f32, hi: f32) -> Result<NormalizedImage> {
    Ok(Normalizer::new(lo, hi)?.normalize(frame))
}

/// Default distance in frames between the two images of a motion difference.
pub const DEFAULT_DIFF_STRIDE: usize = 5;

/// Element-wise `current - past`.
pub fn diff_image(current: &NormalizedImage, past: &NormalizedImage) -> Result<DiffImage> {
    if !current.same_shape(past) {
        bail!(
            Dimension,
            "difference of {}x{} and {}x{} images",
            current.width,
            current.height,
            past.width,
            past.height
        );
    }
    Ok(DiffImage {
        width: current.width,
        height: current.height,
        values: current.values.iter().zip(&past.values).map(|(c, p)| c - p).collect(),
    })
}

/// Annotated person box in corner format, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub frame_index: u64,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl GroundTruthBox {
    pub fn rect(&self) -> Rect {
        Rect { x: self.x, y: self.y, w: self.w, h: self.h }
    }

    /// The box must have positive size and lie fully inside the frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
            && self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= width as f32
            && self.y + self.h <= height as f32;
        if !ok {
            bail!(
                Validation,
                "box (x={}, y={}, w={}, h={}) of frame {} is degenerate or outside [0,{}]x[0,{}]",
                self.x,
                self.y,
                self.w,
                self.h,
                self.frame_index,
                width,
                height
            );
        }
        Ok(())
    }
}

/// Group boxes by frame for a sequence of `n_frames` frames. Boxes whose
/// frame index is out of range are rejected.
pub fn boxes_per_frame(boxes: &[GroundTruthBox], n_frames: usize) -> Result<Vec<Vec<GroundTruthBox>>> {
    let mut out = alloc::vec![Vec::new(); n_frames];
    for b in boxes {
        let Some(slot) = out.get_mut(b.frame_index as usize) else {
            bail!(Validation, "annotation refers to frame {} but the sequence has {} frames", b.frame_index, n_frames);
        };
        slot.push(*b);
    }
    Ok(out)
}
