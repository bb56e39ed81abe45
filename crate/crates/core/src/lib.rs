//! Splicing detection and localization with a conditional GAN.
//!
//! A U-Net generator maps an image to a per-pixel forgery likelihood mask
//! and is trained against a PatchGAN discriminator with an adversarial
//! term plus a weighted reconstruction term. Image-level detection
//! thresholds the mean mask value; localization thresholds pixels.

pub mod error;
pub mod eval;
pub mod forge;
pub mod inference;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod train;
pub mod types;

pub use error::{Error, Result};
