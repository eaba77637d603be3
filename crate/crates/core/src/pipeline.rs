//! Deployment frame loop: normalize, subtract background, run the detector,
//! decode, suppress, and feed the surviving boxes back into the background.
//!
//! The scene is assumed empty while the first frames build the background.

use alloc::vec::Vec;

use crate::detect::{decode, nms, Detection, DEFAULT_NMS_IOU};
use crate::error::{bail, Result};
use crate::frame::ThermalFrame;
use crate::graph::ModelGraph;
use crate::infer::forward;
use crate::preprocess::{InputSpec, Preprocessor};
use crate::quant::QuantizedModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Executor {
    F32(ModelGraph),
    Int8(QuantizedModel),
}

impl Executor {
    pub fn input_channels(&self) -> usize {
        match self {
            Executor::F32(g) => g.input_channels,
            Executor::Int8(q) => q.input_channels(),
        }
    }

    pub fn anchors(&self) -> &crate::detect::AnchorSet {
        match self {
            Executor::F32(g) => &g.anchors,
            Executor::Int8(q) => &q.anchors,
        }
    }

    /// Raw head tensor (dequantized for the int8 executor).
    pub fn run(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Executor::F32(g) => forward(g, input),
            Executor::Int8(q) => q.forward(input),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub conf_threshold: f32,
    pub nms_iou: f32,
    pub input: InputSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { conf_threshold: 0.5, nms_iou: DEFAULT_NMS_IOU, input: InputSpec::default() }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            bail!(Config, "thresholds must lie in [0, 1]");
        }
        self.input.background.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Preprocess,
    Inference,
    Postprocess,
    BackgroundUpdate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Preprocess, Stage::Inference, Stage::Postprocess, Stage::BackgroundUpdate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "normalize+bg_sub",
            Stage::Inference => "inference",
            Stage::Postprocess => "decode+nms",
            Stage::BackgroundUpdate => "bg_update",
        }
    }
}

/// Receives stage boundaries; the core has no clock of its own.
pub trait StageTimer {
    fn begin(&mut self, stage: Stage);
    fn end(&mut self, stage: Stage);
}

impl StageTimer for () {
    fn begin(&mut self, _: Stage) {}
    fn end(&mut self, _: Stage) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    /// `None` while the background is still being built.
    pub detections: Option<Vec<Detection>>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    executor: Executor,
    cfg: PipelineConfig,
    pre: Preprocessor,
}

impl Pipeline {
    pub fn new(executor: Executor, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if executor.input_channels() != cfg.input.input_channels() {
            bail!(
                Config,
                "model takes {} input channels, configuration produces {}",
                executor.input_channels(),
                cfg.input.input_channels()
            );
        }
        Ok(Self { pre: Preprocessor::new(cfg.input)?, executor, cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.pre
    }

    /// Process one frame. Sees only the frames pushed so far.
    pub fn step(&mut self, frame: &ThermalFrame, timer: &mut dyn StageTimer) -> Result<FrameDetections> {
        timer.begin(Stage::Preprocess);
        let input = self.pre.push(frame)?;
        timer.end(Stage::Preprocess);
        let Some(input) = input else {
            return Ok(FrameDetections { frame_index: frame.index, detections: None });
        };
        timer.begin(Stage::Inference);
        let raw = self.executor.run(&input)?;
        timer.end(Stage::Inference);
        timer.begin(Stage::Postprocess);
        let dets = nms(&decode(&raw, self.executor.anchors(), self.cfg.conf_threshold)?, self.cfg.nms_iou);
        timer.end(Stage::Postprocess);
        timer.begin(Stage::BackgroundUpdate);
        let (w, h) = (frame.width as f32, frame.height as f32);
        let rects: Vec<_> = dets.iter().map(|d| d.clipped_rect(w, h)).collect();
        self.pre.feedback(&rects)?;
        timer.end(Stage::BackgroundUpdate);
        Ok(FrameDetections { frame_index: frame.index, detections: Some(dets) })
    }
}

/// Run a whole stream one frame at a time.
pub fn run<'a>(
    executor: Executor,
    cfg: PipelineConfig,
    frames: impl IntoIterator<Item = &'a ThermalFrame>,
    timer: &mut dyn StageTimer,
) -> Result<Vec<FrameDetections>> {
    let mut p = Pipeline::new(executor, cfg)?;
    let mut out = Vec::new();
    for f in frames {
        out.push(p.step(f, timer)?);
    }
    if out.len() < crate::background::INIT_FRAMES {
        bail!(Init, "a stream needs at least {} frames to build the background, got {}", crate::background::INIT_FRAMES, out.len());
    }
    Ok(out)
}
