//! Synthetic thermal scenes for desk-scale experiments.
//!
//! Persons are warm anisotropic Gaussian blobs doing a random walk; imposters
//! are identical blobs that never move and carry no annotation. Blob widths
//! are drawn from `size_range`, the annotated box spans ±2σ of the blob.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::error::{bail, Result};
use crate::frame::{GroundTruthBox, ThermalFrame, FRAME_HEIGHT, FRAME_WIDTH, MAX_TEMP_C, MIN_TEMP_C};
use crate::math::{gaussian, uniform_range};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneConfig {
    pub n_frames: usize,
    pub n_persons: usize,
    pub n_imposters: usize,
    pub ambient_c: f32,
    /// Peak blob temperature range in °C.
    pub person_temp_c: (f32, f32),
    pub noise_sigma: f32,
    /// Person displacement per frame in pixels.
    pub speed: f32,
    /// Blob width/height range in pixels.
    pub size_range: (f32, f32),
    /// Frames at the start during which no person is present.
    pub lead_in_frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            n_frames: 100,
            n_persons: 1,
            n_imposters: 0,
            ambient_c: 22.0,
            person_temp_c: (30.0, 34.0),
            noise_sigma: 0.2,
            speed: 0.5,
            size_range: (3.0, 8.0),
            lead_in_frames: 0,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.person_temp_c;
        if !(lo > self.ambient_c && hi >= lo) {
            bail!(Config, "person temperature range ({}, {}) must lie above ambient {}", lo, hi, self.ambient_c);
        }
        if !(self.noise_sigma >= 0.0 && self.speed >= 0.0) {
            bail!(Config, "noise and speed must be non-negative");
        }
        let (s0, s1) = self.size_range;
        if !(s0 > 0.0 && s1 >= s0 && s1 <= FRAME_HEIGHT as f32) {
            bail!(Config, "blob size range ({}, {}) is invalid", s0, s1);
        }
        if hi > MAX_TEMP_C || self.ambient_c < MIN_TEMP_C {
            bail!(Config, "temperatures outside the sensor range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f32,
    cy: f32,
    w: f32,
    h: f32,
    peak: f32,
    heading: f32,
}

impl Blob {
    fn sample(rng: &mut ChaCha8Rng, cfg: &SyntheticSceneConfig) -> Self {
        let w = uniform_range(rng, cfg.size_range.0 as f64, cfg.size_range.1 as f64) as f32;
        let h = uniform_range(rng, cfg.size_range.0 as f64, cfg.size_range.1 as f64) as f32;
        let cx = uniform_range(rng, w as f64 / 2.0, FRAME_WIDTH as f64 - w as f64 / 2.0) as f32;
        let cy = uniform_range(rng, h as f64 / 2.0, FRAME_HEIGHT as f64 - h as f64 / 2.0) as f32;
        let peak = uniform_range(rng, cfg.person_temp_c.0 as f64, cfg.person_temp_c.1 as f64) as f32;
        let heading = uniform_range(rng, 0.0, core::f64::consts::TAU) as f32;
        Self { cx, cy, w, h, peak, heading }
    }

    fn heat(&self, x: f32, y: f32) -> f32 {
        let (sx, sy) = (self.w / 4.0, self.h / 4.0);
        let dx = (x - self.cx) / sx;
        let dy = (y - self.cy) / sy;
        libm::expf(-0.5 * (dx * dx + dy * dy))
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, speed: f32) {
        let turn = gaussian(rng) as f32 * 0.3;
        if speed == 0.0 {
            return;
        }
        self.heading += turn;
        let (s, c) = libm::sincosf(self.heading);
        let (mut vx, mut vy) = (speed * c, speed * s);
        let (xmin, xmax) = (self.w / 2.0, FRAME_WIDTH as f32 - self.w / 2.0);
        let (ymin, ymax) = (self.h / 2.0, FRAME_HEIGHT as f32 - self.h / 2.0);
        if self.cx + vx < xmin || self.cx + vx > xmax {
            vx = -vx;
        }
        if self.cy + vy < ymin || self.cy + vy > ymax {
            vy = -vy;
        }
        self.cx = (self.cx + vx).clamp(xmin, xmax);
        self.cy = (self.cy + vy).clamp(ymin, ymax);
        self.heading = libm::atan2f(vy, vx);
    }

    fn annotation(&self, frame_index: u64) -> GroundTruthBox {
        GroundTruthBox { frame_index, x: self.cx - self.w / 2.0, y: self.cy - self.h / 2.0, w: self.w, h: self.h }
    }
}

/// Generate a labelled sequence. Output is a pure function of `cfg`.
pub fn synth_sequence(cfg: &SyntheticSceneConfig) -> Result<(Vec<ThermalFrame>, Vec<GroundTruthBox>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut persons: Vec<Blob> = (0..cfg.n_persons).map(|_| Blob::sample(&mut rng, cfg)).collect();
    let imposters: Vec<Blob> = (0..cfg.n_imposters).map(|_| Blob::sample(&mut rng, cfg)).collect();
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut boxes = Vec::new();
    for t in 0..cfg.n_frames {
        let present = t >= cfg.lead_in_frames;
        let mut temps = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT);
        for y in 0..FRAME_HEIGHT {
            for x in 0..FRAME_WIDTH {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let mut temp = cfg.ambient_c;
                let visible = imposters.iter().chain(persons.iter().filter(|_| present));
                for b in visible {
                    temp = temp.max(cfg.ambient_c + (b.peak - cfg.ambient_c) * b.heat(px, py));
                }
                temp += cfg.noise_sigma * gaussian(&mut rng) as f32;
                temps.push(temp.clamp(MIN_TEMP_C, MAX_TEMP_C));
            }
        }
        frames.push(ThermalFrame { width: FRAME_WIDTH, height: FRAME_HEIGHT, temps, index: t as u64 });
        if present {
            boxes.extend(persons.iter().map(|p| p.annotation(t as u64)));
            for p in &mut persons {
                p.step(&mut rng, cfg.speed);
            }
        }
    }
    Ok((frames, boxes))
}
