//! Radiograph joint-damage scoring: image standardization, limb masking,
//! joint detection and identification, ordinal scoring, and evaluation.

pub mod anatomy;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod enhance;
pub mod error;
pub mod geometry;
pub mod identify;
pub mod mask;
pub mod metrics;
pub mod ordinal;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod report;
pub mod scorer;
pub mod synth;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
