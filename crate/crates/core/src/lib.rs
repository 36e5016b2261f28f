//! Sim-to-real texture adaptation for camera-based tactile images.
//!
//! The crate covers the full pipeline: a synthetic paired dataset with
//! contact masks, a U-Net/PatchGAN cycle-consistent translator trained with
//! a mask-restricted background loss, image-level evaluation, and a
//! downstream classification transfer experiment.

pub mod classify;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod mask;
pub mod models;
pub mod training;

pub use error::{Error, Result};
