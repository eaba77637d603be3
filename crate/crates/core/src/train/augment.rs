//! Training-time augmentation: flips plus affine contrast/brightness.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::detect::Rect;
use crate::math::{uniform, uniform_range};
use crate::preprocess::ChannelKind;
use crate::tensor::Tensor;

/// A network input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub boxes: Vec<Rect>,
    pub kinds: Vec<ChannelKind>,
    pub frame_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Probability of each transform.
    pub probability: f64,
    pub contrast: (f64, f64),
    pub brightness: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { probability: 0.5, contrast: (0.8, 1.2), brightness: (-0.1, 0.1) }
    }
}

pub fn flip_horizontal(sample: &mut Sample) {
    let (h, w) = (sample.input.height, sample.input.width);
    for c in 0..sample.input.channels {
        let plane = sample.input.channel_mut(c);
        for y in 0..h {
            plane[y * w..(y + 1) * w].reverse();
        }
    }
    for b in &mut sample.boxes {
        b.x = w as f32 - b.x - b.w;
    }
}

pub fn flip_vertical(sample: &mut Sample) {
    let (h, w) = (sample.input.height, sample.input.width);
    for c in 0..sample.input.channels {
        let plane = sample.input.channel_mut(c);
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
    for b in &mut sample.boxes {
        b.y = h as f32 - b.y - b.h;
    }
}

/// Scale contrast around the channel's neutral level (0.5 for absolute
/// channels, 0 for signed ones) and clamp to the channel range.
pub fn adjust_contrast(sample: &mut Sample, factor: f32) {
    for (c, kind) in sample.kinds.clone().into_iter().enumerate() {
        let (lo, hi) = kind.range();
        let pivot = (lo + hi) / 2.0;
        for v in sample.input.channel_mut(c) {
            *v = ((*v - pivot) * factor + pivot).clamp(lo, hi);
        }
    }
}

/// Add an offset to absolute channels. Difference channels are left alone:
/// a global temperature offset cancels in a difference.
pub fn adjust_brightness(sample: &mut Sample, offset: f32) {
    for (c, kind) in sample.kinds.clone().into_iter().enumerate() {
        if kind != ChannelKind::Absolute {
            continue;
        }
        let (lo, hi) = kind.range();
        for v in sample.input.channel_mut(c) {
            *v = (*v + offset).clamp(lo, hi);
        }
    }
}

/// Apply each transform independently with `cfg.probability`. The random
/// draws happen in a fixed order so a seeded generator reproduces the result.
pub fn augment<R: RngCore>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    let mut s = sample.clone();
    let hflip = uniform(rng) < cfg.probability;
    let vflip = uniform(rng) < cfg.probability;
    let contrast = (uniform(rng) < cfg.probability).then(|| uniform_range(rng, cfg.contrast.0, cfg.contrast.1));
    let brightness = (uniform(rng) < cfg.probability).then(|| uniform_range(rng, cfg.brightness.0, cfg.brightness.1));
    if hflip {
        flip_horizontal(&mut s);
    }
    if vflip {
        flip_vertical(&mut s);
    }
    if let Some(f) = contrast {
        adjust_contrast(&mut s, f as f32);
    }
    if let Some(o) = brightness {
        adjust_brightness(&mut s, o as f32);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(value: f32) -> Sample {
        Sample {
            input: Tensor::from_vec(1, 24, 32, vec![value; 768]).unwrap(),
            boxes: vec![Rect { x: 2.0, y: 3.0, w: 4.0, h: 5.0 }],
            kinds: vec![ChannelKind::Absolute],
            frame_index: 0,
        }
    }

    #[test]
    fn horizontal_flip_mirrors_box() {
        let mut s = sample(0.5);
        flip_horizontal(&mut s);
        assert_eq!(s.boxes[0].x, 26.0);
        flip_horizontal(&mut s);
        assert_eq!(s, sample(0.5));
    }

    #[test]
    fn vertical_flip_is_an_involution() {
        let mut s = sample(0.0);
        for (i, v) in s.input.data.iter_mut().enumerate() {
            *v = i as f32 / 768.0;
        }
        let orig = s.clone();
        flip_vertical(&mut s);
        assert_eq!(s.boxes[0].y, 24.0 - 3.0 - 5.0);
        assert_eq!(s.input.at(0, 0, 5), orig.input.at(0, 23, 5));
        flip_vertical(&mut s);
        assert_eq!(s, orig);
    }

    #[test]
    fn brightness_saturates() {
        let mut s = sample(0.95);
        adjust_brightness(&mut s, 0.1);
        assert!(s.input.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn signed_channels_ignore_brightness() {
        let mut s = sample(-0.2);
        s.kinds = vec![ChannelKind::Signed];
        adjust_brightness(&mut s, 0.1);
        assert!(s.input.data.iter().all(|&v| v == -0.2));
        adjust_contrast(&mut s, 2.0);
        assert!(s.input.data.iter().all(|&v| v == -0.4));
    }
}
