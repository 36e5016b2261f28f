//! Joint geometric augmentation of aligned sample fields.
//!
//! One transform (upscale, random crop, small rotation about the crop
//! centre, optional horizontal flip) is drawn per call and applied to every
//! image-like field of the pair. Images and depth are resampled bilinearly,
//! masks by nearest neighbour so they stay binary. Sampling outside the
//! source clamps to the nearest edge pixel.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SamplePair;
use crate::error::{ensure, Result};
use crate::image::{DepthMap, TactileImage};
use crate::mask::ContactMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Resolution increase before cropping.
    pub upscale: f64,
    /// Side of the square output crop; `0` keeps the input size.
    pub crop_size: usize,
    pub max_rotation_deg: f64,
    pub flip_probability: f64,
    /// Base seed for per-sample transform streams.
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { enabled: true, upscale: 1.12, crop_size: 0, max_rotation_deg: 5.0, flip_probability: 0.5, seed: 0 }
    }
}

impl AugmentationConfig {
    /// A configuration that leaves samples untouched.
    pub fn identity() -> Self {
        Self { enabled: true, upscale: 1.0, crop_size: 0, max_rotation_deg: 0.0, flip_probability: 0.0, seed: 0 }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        ensure!(self.upscale >= 1.0 && self.upscale.is_finite(), Validation, "augmentation upscale must be >= 1");
        ensure!(
            (0.0..=1.0).contains(&self.flip_probability),
            Validation,
            "flip probability must lie in [0, 1], got {}",
            self.flip_probability
        );
        ensure!(
            self.max_rotation_deg >= 0.0 && self.max_rotation_deg < 90.0,
            Validation,
            "max rotation must lie in [0, 90) degrees"
        );
        let (uh, uw) = self.upscaled(height, width);
        let crop = self.crop_for(height, width);
        ensure!(
            crop >= 1 && crop <= uh && crop <= uw,
            Validation,
            "crop size {crop} exceeds upscaled size {uh}x{uw}"
        );
        Ok(())
    }

    fn upscaled(&self, height: usize, width: usize) -> (usize, usize) {
        ((height as f64 * self.upscale).round() as usize, (width as f64 * self.upscale).round() as usize)
    }

    fn crop_for(&self, height: usize, width: usize) -> usize {
        if self.crop_size == 0 {
            height.min(width)
        } else {
            self.crop_size
        }
    }
}

/// A drawn transform, mapping output pixels to fractional source pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    src_dims: (usize, usize),
    up_dims: (usize, usize),
    crop: usize,
    offset: (usize, usize),
    angle: f64,
    flip: bool,
}

impl Transform {
    /// Draws offsets, angle and flip, always consuming the same number of
    /// random values.
    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentationConfig, height: usize, width: usize, rng: &mut R) -> Result<Self> {
        cfg.validate(height, width)?;
        let up_dims = cfg.upscaled(height, width);
        let crop = cfg.crop_for(height, width);
        let oy = rng.random_range(0..=up_dims.0 - crop);
        let ox = rng.random_range(0..=up_dims.1 - crop);
        let angle = (2.0 * rng.random::<f64>() - 1.0) * cfg.max_rotation_deg.to_radians();
        let flip = rng.random::<f64>() < cfg.flip_probability;
        Ok(Self { src_dims: (height, width), up_dims, crop, offset: (oy, ox), angle, flip })
    }

    /// Source coordinates (row, col) of output pixel `(row, col)`.
    pub fn source(&self, row: usize, col: usize) -> (f64, f64) {
        let c = (self.crop as f64 - 1.0) / 2.0;
        let col = if self.flip { self.crop - 1 - col } else { col };
        let (y, x) = (row as f64 - c, col as f64 - c);
        let (s, co) = self.angle.sin_cos();
        let (ry, rx) = (co * y - s * x + c, s * y + co * x + c);
        let (uy, ux) = (ry + self.offset.0 as f64, rx + self.offset.1 as f64);
        let sy = self.up_dims.0 as f64 / self.src_dims.0 as f64;
        let sx = self.up_dims.1 as f64 / self.src_dims.1 as f64;
        ((uy + 0.5) / sy - 0.5, (ux + 0.5) / sx - 0.5)
    }

    fn bilinear<T: Copy + Into<f64>>(&self, plane: &Array2<T>) -> Array2<f64> {
        let (h, w) = plane.dim();
        Array2::from_shape_fn((self.crop, self.crop), |(r, c)| {
            let (y, x) = self.source(r, c);
            let y = y.clamp(0.0, (h - 1) as f64);
            let x = x.clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let at = |yy: usize, xx: usize| -> f64 { plane[[yy, xx]].into() };
            if fy == 0.0 && fx == 0.0 {
                return at(y0, x0);
            }
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    fn nearest<T: Copy>(&self, plane: &Array2<T>) -> Array2<T> {
        let (h, w) = plane.dim();
        Array2::from_shape_fn((self.crop, self.crop), |(r, c)| {
            let (y, x) = self.source(r, c);
            let y = y.round().clamp(0.0, (h - 1) as f64) as usize;
            let x = x.round().clamp(0.0, (w - 1) as f64) as usize;
            plane[[y, x]]
        })
    }

    pub fn apply_image(&self, img: &TactileImage) -> Result<TactileImage> {
        let data = img.data();
        let channels = data.dim().0;
        let mut out = Array3::<f32>::zeros((channels, self.crop, self.crop));
        for ch in 0..channels {
            let plane = data.index_axis(ndarray::Axis(0), ch).to_owned();
            let resampled = self.bilinear(&plane);
            out.index_axis_mut(ndarray::Axis(0), ch).assign(&resampled.mapv(|v| v as f32));
        }
        TactileImage::from_clamped(out)
    }

    pub fn apply_depth(&self, depth: &DepthMap) -> Result<DepthMap> {
        DepthMap::new(self.bilinear(depth.values()))
    }

    pub fn apply_mask(&self, mask: &ContactMask) -> Result<ContactMask> {
        ContactMask::new(self.nearest(mask.values()))
    }
}

/// Applies one random transform identically to sim, real, depth and mask.
pub fn augment_pair<R: Rng + ?Sized>(pair: &SamplePair, cfg: &AugmentationConfig, rng: &mut R) -> Result<SamplePair> {
    let (h, w) = pair.sim.dims();
    let t = Transform::draw(cfg, h, w, rng)?;
    Ok(SamplePair {
        id: pair.id.clone(),
        depth: t.apply_depth(&pair.depth)?,
        sim: t.apply_image(&pair.sim)?,
        real: pair.real.as_ref().map(|r| t.apply_image(r)).transpose()?,
        mask: t.apply_mask(&pair.mask)?,
        label: pair.label,
        meta: pair.meta.clone(),
    })
}
