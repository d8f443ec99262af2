//! Rectangling of stitched images with two conditional diffusion models.
//!
//! A motion model generates a dense backward field that warps the stitched
//! input into a rectangle; a content model then regenerates the regions of
//! that coarse result which a confidence mask marks as unreliable, keeping
//! the confident pixels exactly.

pub mod cdm;
pub mod dataset;
pub mod diffusion;
pub mod files;
pub mod image;
pub mod masks;
pub mod mdm;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;
pub mod warp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("stale activation cache: {0}")]
    StaleCache(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ::image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use diffusion::{NoiseSchedule, SamplerConfig};
pub use image::{ImagePlane, MaskPlane, MotionField};
