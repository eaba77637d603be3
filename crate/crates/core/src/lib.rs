//! Core of a person detector for 32×24 thermal frames.
//!
//! Everything in this crate is pure computation over owned buffers and only
//! needs `alloc`: frame normalization and synthetic scenes, the sequential
//! depthwise-separable CNN and its kernels, YOLO-style decoding, the masked
//! EMA background model, hand-written backprop training, structured channel
//! pruning, int8 post-training quantization, and detection metrics.
//!
//! File formats, timing and the command line live in the `tinytherm` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod arena;
pub mod background;
pub mod detect;
pub mod error;
pub mod eval;
pub mod frame;
pub mod graph;
pub mod infer;
pub mod kernels;
pub mod pipeline;
pub mod preprocess;
pub mod prune;
pub mod quant;
pub mod synth;
pub mod tensor;
pub mod train;

mod math;

pub use error::{Error, Result};
pub use frame::{GroundTruthBox, NormalizedImage, ThermalFrame, FRAME_HEIGHT, FRAME_WIDTH};
pub use graph::{LayerDesc, LayerKind, ModelGraph};
pub use tensor::Tensor;
