//! Host-side half of the thermal person detector: TIFF frames, JSON-lines
//! annotations and detections, model containers, configuration, run
//! manifests, CSV/SVG reports and wall-clock stage timing. The computation
//! itself lives in `tinytherm-core`.

pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod jsonl;
pub mod manifest;
pub mod report;
pub mod tiff;
pub mod timing;

pub use error::{Error, Result};
