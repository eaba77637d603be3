//! Background model of stationary scene content.
//!
//! The background `B` starts as the mean of three person-free frames. On an
//! update, every box in `D` is grown by one pixel on each side, a mask `M`
//! marks the pixels those boxes touch, the candidate `B̂` keeps `B` under the
//! mask and takes the current image `I₀` elsewhere, and the new background is
//! the EMA `αB + (1 − α)B̂`. Full updates run once per `update_period` frames.

use alloc::vec;
use alloc::vec::Vec;

use crate::detect::Rect;
use crate::error::{bail, Error, Result};
use crate::frame::{DiffImage, NormalizedImage};

pub const DEFAULT_ALPHA: f32 = 0.99;
pub const DEFAULT_UPDATE_PERIOD: usize = 25;
pub const INIT_FRAMES: usize = 3;
/// Pixels added on every side of a box before masking.
pub const BOX_MARGIN: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundConfig {
    pub alpha: f32,
    pub update_period: usize,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, update_period: DEFAULT_UPDATE_PERIOD }
    }
}

impl BackgroundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!(Config, "background decay must lie in (0, 1), got {}", self.alpha);
        }
        if self.update_period == 0 {
            bail!(Config, "background update period must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundState {
    pub width: usize,
    pub height: usize,
    pub background: Vec<f32>,
    pub config: BackgroundConfig,
    /// Frames seen since the last full update (0 right after init).
    pub frames_since_update: usize,
}

impl BackgroundState {
    /// Average exactly three frames.
    pub fn init(frames: &[NormalizedImage], config: BackgroundConfig) -> Result<Self> {
        config.validate()?;
        if frames.len() != INIT_FRAMES {
            return Err(Error::Arity { expected: INIT_FRAMES, got: frames.len() });
        }
        let first = &frames[0];
        if frames.iter().any(|f| !f.same_shape(first)) {
            bail!(Dimension, "initial background frames differ in shape");
        }
        let background = (0..first.values.len())
            .map(|p| {
                let s: f64 = frames.iter().map(|f| f.values[p] as f64).sum();
                (s / INIT_FRAMES as f64) as f32
            })
            .collect();
        Ok(Self { width: first.width, height: first.height, background, config, frames_since_update: 0 })
    }

    fn check_shape(&self, image: &NormalizedImage) -> Result<()> {
        if image.width != self.width || image.height != self.height {
            bail!(
                Dimension,
                "background is {}x{}, image is {}x{}",
                self.width,
                self.height,
                image.width,
                image.height
            );
        }
        Ok(())
    }

    /// Binary mask of the pixels overlapped by any box grown by [`BOX_MARGIN`],
    /// clipped to the image.
    pub fn mask(&self, boxes: &[Rect]) -> Vec<bool> {
        let mut mask = vec![false; self.width * self.height];
        for b in boxes {
            let x0 = libm::floorf(b.x - BOX_MARGIN).max(0.0) as usize;
            let y0 = libm::floorf(b.y - BOX_MARGIN).max(0.0) as usize;
            let x1 = (libm::ceilf(b.x + b.w + BOX_MARGIN).max(0.0) as usize).min(self.width);
            let y1 = (libm::ceilf(b.y + b.h + BOX_MARGIN).max(0.0) as usize).min(self.height);
            for y in y0..y1 {
                mask[y * self.width + x0..y * self.width + x1.max(x0)].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    /// One full update, regardless of cadence.
    pub fn update_now(&mut self, image: &NormalizedImage, boxes: &[Rect]) -> Result<()> {
        self.check_shape(image)?;
        let mask = self.mask(boxes);
        let rate = 1.0 - self.config.alpha;
        for ((b, &i0), &m) in self.background.iter_mut().zip(&image.values).zip(&mask) {
            let candidate = if m { *b } else { i0 };
            *b = (*b + rate * (candidate - *b)).clamp(0.0, 1.0);
        }
        self.frames_since_update = 0;
        Ok(())
    }

    /// Per-frame entry point: counts frames and performs a full update on
    /// every `update_period`-th call. Returns whether the update ran.
    pub fn update(&mut self, image: &NormalizedImage, boxes: &[Rect]) -> Result<bool> {
        self.check_shape(image)?;
        self.frames_since_update += 1;
        if self.frames_since_update >= self.config.update_period {
            self.update_now(image, boxes)?;
            return Ok(true);
        }
        Ok(false)
    }

    /// `I₀ − B`.
    pub fn subtract(&self, image: &NormalizedImage) -> Result<DiffImage> {
        self.check_shape(image)?;
        Ok(DiffImage {
            width: self.width,
            height: self.height,
            values: image.values.iter().zip(&self.background).map(|(i, b)| i - b).collect(),
        })
    }
}
