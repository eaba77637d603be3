//! Run configuration: a TOML file with one table per stage.
//!
//! Every key is optional; missing keys take the library defaults, so an
//! empty file is a valid configuration. Unknown keys are rejected to catch
//! typos.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tinytherm_core::background::BackgroundConfig;
use tinytherm_core::frame::{Normalizer, DEFAULT_NORM_HI, DEFAULT_NORM_LO};
use tinytherm_core::graph::ArchConfig;
use tinytherm_core::preprocess::InputSpec;
use tinytherm_core::prune::PruneConfig;
use tinytherm_core::synth::SyntheticSceneConfig;
use tinytherm_core::train::{AugmentConfig, LossConfig, LrPolicy, TrainConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub input: InputSection,
    pub background: BackgroundSection,
    pub arch: ArchSection,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub quantize: QuantizeSection,
    pub eval: EvalSection,
    pub detect: DetectSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            input: Default::default(),
            background: Default::default(),
            arch: Default::default(),
            synth: Default::default(),
            train: Default::default(),
            prune: Default::default(),
            quantize: Default::default(),
            eval: Default::default(),
            detect: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub norm_lo_c: f32,
    pub norm_hi_c: f32,
    pub use_bg_sub: bool,
    pub use_diff: bool,
    pub diff_stride: usize,
}

impl Default for InputSection {
    fn default() -> Self {
        let s = InputSpec::default();
        Self {
            norm_lo_c: DEFAULT_NORM_LO,
            norm_hi_c: DEFAULT_NORM_HI,
            use_bg_sub: s.use_bg_sub,
            use_diff: s.use_diff,
            diff_stride: s.diff_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundSection {
    pub alpha: f32,
    pub update_period: usize,
}

impl Default for BackgroundSection {
    fn default() -> Self {
        let b = BackgroundConfig::default();
        Self { alpha: b.alpha, update_period: b.update_period }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub widths: Vec<usize>,
    pub stride2_blocks: Vec<usize>,
    pub num_anchors: usize,
    /// Fit anchors to the training boxes with IoU k-means before training.
    pub fit_anchors: bool,
    pub kmeans_iterations: usize,
}

impl Default for ArchSection {
    fn default() -> Self {
        let a = ArchConfig::default();
        Self { widths: a.widths, stride2_blocks: a.stride2_blocks, num_anchors: a.num_anchors, fit_anchors: true, kmeans_iterations: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub test_sequences: usize,
    pub frames_per_sequence: usize,
    pub n_persons: usize,
    pub n_imposters: usize,
    pub ambient_c: f32,
    pub person_temp_c: (f32, f32),
    pub noise_sigma: f32,
    pub speed: f32,
    pub size_px: (f32, f32),
    pub lead_in_frames: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticSceneConfig::default();
        Self {
            train_sequences: 10,
            val_sequences: 2,
            test_sequences: 2,
            frames_per_sequence: 50,
            n_persons: 1,
            n_imposters: 5,
            ambient_c: s.ambient_c,
            person_temp_c: s.person_temp_c,
            noise_sigma: s.noise_sigma,
            speed: s.speed,
            size_px: s.size_range,
            lead_in_frames: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_iters: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub val_every: usize,
    pub warmup_iters: usize,
    pub warmup_start_factor: f64,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub bn_momentum: f64,
    pub coord_weight: f64,
    pub obj_weight: f64,
    pub noobj_weight: f64,
    pub ignore_iou: f32,
    pub augment: bool,
    pub augment_probability: f64,
    pub contrast: (f64, f64),
    pub brightness: (f64, f64),
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let LrPolicy::WarmupPlateau { warmup_iters, warmup_start_factor, patience, decay_factor } = t.policy else {
            unreachable!("default policy is warm-up + plateau")
        };
        let a = t.augment.unwrap_or_default();
        Self {
            max_iters: t.max_iters,
            base_lr: t.base_lr,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            batch_size: t.batch_size,
            val_every: t.val_every,
            warmup_iters,
            warmup_start_factor,
            plateau_patience: patience,
            lr_decay_factor: decay_factor,
            bn_momentum: t.bn_momentum,
            coord_weight: t.loss.coord,
            obj_weight: t.loss.obj,
            noobj_weight: t.loss.noobj,
            ignore_iou: t.loss.ignore_iou,
            augment: t.augment.is_some(),
            augment_probability: a.probability,
            contrast: a.contrast,
            brightness: a.brightness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub fraction_per_iter: f64,
    pub loss_tolerance: f64,
    pub max_iterations: usize,
    pub finetune_max_iters: usize,
    pub finetune_lr: f64,
    pub finetune_lr_drop_at: usize,
    /// Skip validation and fine-tuning entirely.
    pub structural_only: bool,
}

impl Default for PruneSection {
    fn default() -> Self {
        let p = PruneConfig::default();
        Self {
            fraction_per_iter: p.fraction_per_iter,
            loss_tolerance: p.loss_tolerance,
            max_iterations: p.max_iterations,
            finetune_max_iters: p.finetune_max_iters,
            finetune_lr: p.finetune_lr,
            finetune_lr_drop_at: p.finetune_lr_drop_at,
            structural_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeSection {
    pub calibration_images: usize,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        Self { calibration_images: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub match_iou: f32,
    /// Confidence floor when collecting detections for a PR curve.
    pub score_floor: f32,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { match_iou: tinytherm_core::eval::DEFAULT_MATCH_IOU, score_floor: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub conf_threshold: f32,
    pub nms_iou: f32,
    /// Write the background image every this many frames; 0 disables.
    pub bg_dump_every: usize,
}

impl Default for DetectSection {
    fn default() -> Self {
        let p = tinytherm_core::pipeline::PipelineConfig::default();
        Self { conf_threshold: p.conf_threshold, nms_iou: p.nms_iou, bg_dump_every: 0 }
    }
}

/// Seed offsets that keep the three synthetic splits disjoint.
const SPLIT_SEEDS: [(&str, u64); 3] = [("train", 0), ("val", 1 << 20), ("test", 2 << 20)];

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cross-check every section by building the core configurations.
    pub fn validate(&self) -> Result<()> {
        let spec = self.input_spec()?;
        tinytherm_core::preprocess::Preprocessor::new(spec)?;
        self.arch_config().layers(spec.input_channels())?;
        self.train_config().validate()?;
        self.prune_config().validate()?;
        for (split, _) in SPLIT_SEEDS {
            self.scene(split, 0)?.validate()?;
        }
        let in_unit = |v: f32| (0.0..=1.0).contains(&v);
        if !in_unit(self.eval.match_iou) || !in_unit(self.eval.score_floor) {
            return Err(Error::Config("eval thresholds must lie in [0, 1]".into()));
        }
        if self.quantize.calibration_images == 0 {
            return Err(Error::Config("calibration needs at least one image".into()));
        }
        self.pipeline_config(self.detect.conf_threshold)?.validate()?;
        Ok(())
    }

    pub fn input_spec(&self) -> Result<InputSpec> {
        Ok(InputSpec {
            use_bg_sub: self.input.use_bg_sub,
            use_diff: self.input.use_diff,
            diff_stride: self.input.diff_stride,
            normalizer: Normalizer::new(self.input.norm_lo_c, self.input.norm_hi_c)?,
            background: BackgroundConfig { alpha: self.background.alpha, update_period: self.background.update_period },
        })
    }

    pub fn arch_config(&self) -> ArchConfig {
        ArchConfig { widths: self.arch.widths.clone(), stride2_blocks: self.arch.stride2_blocks.clone(), num_anchors: self.arch.num_anchors }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            max_iters: t.max_iters,
            base_lr: t.base_lr,
            policy: LrPolicy::WarmupPlateau {
                warmup_iters: t.warmup_iters,
                warmup_start_factor: t.warmup_start_factor,
                patience: t.plateau_patience,
                decay_factor: t.lr_decay_factor,
            },
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            batch_size: t.batch_size,
            val_every: t.val_every,
            stop_at_val_loss: None,
            bn_momentum: t.bn_momentum,
            loss: LossConfig { coord: t.coord_weight, obj: t.obj_weight, noobj: t.noobj_weight, ignore_iou: t.ignore_iou },
            augment: t.augment.then_some(AugmentConfig { probability: t.augment_probability, contrast: t.contrast, brightness: t.brightness }),
            seed: self.seed,
        }
    }

    pub fn prune_config(&self) -> PruneConfig {
        let p = &self.prune;
        PruneConfig {
            fraction_per_iter: p.fraction_per_iter,
            loss_tolerance: p.loss_tolerance,
            max_iterations: p.max_iterations,
            finetune_max_iters: p.finetune_max_iters,
            finetune_lr: p.finetune_lr,
            finetune_lr_drop_at: p.finetune_lr_drop_at,
        }
    }

    pub fn pipeline_config(&self, conf_threshold: f32) -> Result<tinytherm_core::pipeline::PipelineConfig> {
        Ok(tinytherm_core::pipeline::PipelineConfig { conf_threshold, nms_iou: self.detect.nms_iou, input: self.input_spec()? })
    }

    /// Scene `index` of a synthetic split (`train`, `val` or `test`).
    pub fn scene(&self, split: &str, index: usize) -> Result<SyntheticSceneConfig> {
        let Some(&(_, offset)) = SPLIT_SEEDS.iter().find(|(s, _)| *s == split) else {
            return Err(Error::Usage(format!("unknown split {split:?}")));
        };
        let s = &self.synth;
        Ok(SyntheticSceneConfig {
            n_frames: s.frames_per_sequence,
            n_persons: s.n_persons,
            n_imposters: s.n_imposters,
            ambient_c: s.ambient_c,
            person_temp_c: s.person_temp_c,
            noise_sigma: s.noise_sigma,
            speed: s.speed,
            size_range: s.size_px,
            lead_in_frames: s.lead_in_frames,
            seed: self.seed.wrapping_mul(0x9E37_79B9).wrapping_add(offset + index as u64),
        })
    }

    pub fn split_sizes(&self) -> [(&'static str, usize); 3] {
        [("train", self.synth.train_sequences), ("val", self.synth.val_sequences), ("test", self.synth.test_sequences)]
    }
}
