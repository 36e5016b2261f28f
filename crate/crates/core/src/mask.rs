//! Binary contact masks derived from simulated depth maps.

use std::path::Path;

use image::GrayImage;
use ndarray::Array2;

use crate::error::{ensure, Error, Result};
use crate::image::{codec_error, DepthMap};

/// Per-pixel contact indicator: 1 where the elastomer is pressed in, 0 on the
/// undeformed background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactMask {
    values: Array2<u8>,
}

impl ContactMask {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        ensure!(values.iter().all(|v| *v <= 1), Validation, "contact mask must be binary");
        Ok(Self { values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { values: Array2::zeros((height, width)) }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { values: Array2::ones((height, width)) }
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_contact(&self, row: usize, col: usize) -> bool {
        self.values[[row, col]] == 1
    }

    pub fn contact_pixels(&self) -> usize {
        self.values.iter().filter(|v| **v == 1).count()
    }

    /// Mask as `f32` weights (1 = contact).
    pub fn as_f32(&self) -> Array2<f32> {
        self.values.mapv(f32::from)
    }

    /// Stores as 8-bit grey PNG with contact = 255.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.dims();
        let img = GrayImage::from_raw(w as u32, h as u32, self.values.iter().map(|v| v * 255).collect()).expect("buffer size");
        img.save(path).map_err(|e| codec_error(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| codec_error(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        let raw = img.into_raw();
        ensure!(
            raw.iter().all(|v| *v == 0 || *v == 255),
            Integrity,
            "{}: mask PNG must contain only 0 and 255",
            path.display()
        );
        Ok(Self { values: Array2::from_shape_vec((h as usize, w as usize), raw.iter().map(|v| v / 255).collect()).unwrap() })
    }
}

/// Contact mask: 1 where `depth < elastomer_depth` (strictly), else 0.
pub fn mask_from_depth(depth: &DepthMap, elastomer_depth: f64) -> Result<ContactMask> {
    ensure!(
        elastomer_depth > 0.0 && elastomer_depth.is_finite(),
        Validation,
        "elastomer depth must be positive, got {elastomer_depth}"
    );
    if depth.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("depth map contains non-finite values".into()));
    }
    Ok(ContactMask { values: depth.values().mapv(|d| u8::from(d < elastomer_depth)) })
}

/// Background weights `1 − m`.
pub fn background_selector(mask: &ContactMask) -> Array2<f32> {
    mask.values.mapv(|v| 1.0 - f32::from(v))
}

/// Complement of a mask.
pub fn complement(mask: &ContactMask) -> ContactMask {
    ContactMask { values: mask.values.mapv(|v| 1 - v) }
}

/// Fraction of pixels in contact.
pub fn mask_coverage(mask: &ContactMask) -> f64 {
    if mask.values.is_empty() {
        return 0.0;
    }
    mask.contact_pixels() as f64 / mask.values.len() as f64
}
