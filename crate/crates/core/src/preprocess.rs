//! Streaming construction of network inputs from sensor frames.
//!
//! Shared by training-data preparation (background fed with ground-truth
//! boxes) and the deployment loop (background fed with the detector's own
//! post-NMS boxes).

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::background::{BackgroundConfig, BackgroundState, INIT_FRAMES};
use crate::detect::Rect;
use crate::error::{bail, Result};
use crate::frame::{diff_image, NormalizedImage, Normalizer, ThermalFrame, DEFAULT_DIFF_STRIDE};
use crate::infer::assemble_input;
use crate::tensor::Tensor;

/// Value range of an input channel, used by photometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Normalized temperature in [0, 1].
    Absolute,
    /// Difference image in [-1, 1].
    Signed,
}

impl ChannelKind {
    pub fn range(self) -> (f32, f32) {
        match self {
            ChannelKind::Absolute => (0.0, 1.0),
            ChannelKind::Signed => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSpec {
    /// Feed `I₀ − B` instead of `I₀`.
    pub use_bg_sub: bool,
    /// Append `I₀ − I₋ₖ` as a second channel.
    pub use_diff: bool,
    pub diff_stride: usize,
    pub normalizer: Normalizer,
    pub background: BackgroundConfig,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            use_bg_sub: true,
            use_diff: false,
            diff_stride: DEFAULT_DIFF_STRIDE,
            normalizer: Normalizer::default(),
            background: BackgroundConfig::default(),
        }
    }
}

impl InputSpec {
    pub fn input_channels(&self) -> usize {
        1 + self.use_diff as usize
    }

    pub fn channel_kinds(&self) -> Vec<ChannelKind> {
        let mut k = alloc::vec![if self.use_bg_sub { ChannelKind::Signed } else { ChannelKind::Absolute }];
        if self.use_diff {
            k.push(ChannelKind::Signed);
        }
        k
    }

    /// Frames consumed before the first input is produced.
    pub fn warmup_frames(&self) -> usize {
        if self.use_diff {
            INIT_FRAMES.max(self.diff_stride)
        } else {
            INIT_FRAMES
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    spec: InputSpec,
    seen: usize,
    init: Vec<NormalizedImage>,
    background: Option<BackgroundState>,
    history: VecDeque<NormalizedImage>,
    last: Option<NormalizedImage>,
}

impl Preprocessor {
    pub fn new(spec: InputSpec) -> Result<Self> {
        spec.background.validate()?;
        if spec.use_diff && spec.diff_stride == 0 {
            bail!(Config, "difference stride must be positive");
        }
        Ok(Self { spec, seen: 0, init: Vec::new(), background: None, history: VecDeque::new(), last: None })
    }

    pub fn spec(&self) -> &InputSpec {
        &self.spec
    }

    pub fn background(&self) -> Option<&BackgroundState> {
        self.background.as_ref()
    }

    /// Consume the next frame; returns the network input once warm.
    pub fn push(&mut self, frame: &ThermalFrame) -> Result<Option<Tensor>> {
        let image = self.spec.normalizer.normalize(frame);
        self.seen += 1;
        if self.background.is_none() {
            self.init.push(image.clone());
            if self.init.len() == INIT_FRAMES {
                let init = core::mem::take(&mut self.init);
                self.background = Some(BackgroundState::init(&init, self.spec.background)?);
            }
        }
        let ready = self.seen > self.spec.warmup_frames();
        let tensor = if ready { Some(self.build(&image)?) } else { None };
        if self.spec.use_diff {
            self.history.push_back(image.clone());
            if self.history.len() > self.spec.diff_stride {
                self.history.pop_front();
            }
        }
        self.last = ready.then_some(image);
        Ok(tensor)
    }

    fn build(&self, image: &NormalizedImage) -> Result<Tensor> {
        let primary = if self.spec.use_bg_sub {
            let bg = self.background.as_ref().expect("background initialized during warm-up");
            bg.subtract(image)?.values
        } else {
            image.values.clone()
        };
        let motion = if self.spec.use_diff {
            let past = &self.history[self.history.len() - self.spec.diff_stride];
            Some(diff_image(image, past)?.values)
        } else {
            None
        };
        assemble_input(&primary, motion.as_deref(), image.height, image.width)
    }

    /// Feed the boxes found in the last produced input back into the
    /// background model. No-op while warming up.
    pub fn feedback(&mut self, boxes: &[Rect]) -> Result<bool> {
        match (&mut self.background, &self.last) {
            (Some(bg), Some(image)) => bg.update(image, boxes),
            _ => Ok(false),
        }
    }
}
