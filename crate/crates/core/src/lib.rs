//! Single-image test-time adaptation for super-resolution.
//!
//! A pretrained super-resolver (GUP) is adapted to one low-resolution input
//! by first learning that image's downsampler (GDN) with cycle and
//! adversarial losses, then fine-tuning the GUP against the learned
//! downsampler.

pub mod degradation;
pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod patch;
pub mod resample;
pub mod seed;
pub mod synth;
pub mod tta;

pub use error::{Error, Result};
pub use image::Image;
