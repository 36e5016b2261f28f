//! Depth maps and tactile images, pixel normalisation, and PNG storage.
//!
//! Tactile images live in normalised space `[-1, 1]` as `[channel, row, col]`
//! arrays; 8-bit storage maps `v ↦ v / 127.5 − 1` and back with
//! round-half-up. Depth maps are metres from the camera, stored as 16-bit
//! single-channel PNG with a metres-per-unit scale.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3, ArrayView3};

use crate::error::{ensure, Error, Result};

pub const MIN_SIDE: usize = 8;
pub const CHANNELS: usize = 3;

/// Per-pixel distance from the camera in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Array2<f64>,
}

impl DepthMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (h, w) = values.dim();
        ensure!(h >= MIN_SIDE && w >= MIN_SIDE, Validation, "depth map {h}x{w} smaller than {MIN_SIDE}x{MIN_SIDE}");
        ensure!(
            values.iter().all(|v| v.is_finite() && *v >= 0.0),
            Validation,
            "depth map contains negative or non-finite values"
        );
        Ok(Self { values })
    }

    /// Constant plane at `depth`.
    pub fn plane(height: usize, width: usize, depth: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), depth))
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Snaps every value to the integer grid of `scale` metres per unit, so
    /// the map survives 16-bit storage unchanged.
    pub fn quantized(&self, scale: f64) -> Result<Self> {
        let units = self.to_units(scale)?;
        Ok(Self::from_units(&units, scale))
    }

    pub fn to_units(&self, scale: f64) -> Result<Array2<u16>> {
        ensure!(scale > 0.0 && scale.is_finite(), Validation, "depth scale must be positive, got {scale}");
        let max = u16::MAX as f64;
        let mut out = Array2::<u16>::zeros(self.values.raw_dim());
        for (o, v) in out.iter_mut().zip(self.values.iter()) {
            let u = (v / scale).round();
            ensure!(u <= max, Validation, "depth {v} m exceeds 16-bit range at scale {scale} m/unit");
            *o = u as u16;
        }
        Ok(out)
    }

    pub fn from_units(units: &Array2<u16>, scale: f64) -> Self {
        Self { values: units.mapv(|u| u as f64 * scale) }
    }

    pub fn save_png(&self, path: &Path, scale: f64) -> Result<()> {
        let units = self.to_units(scale)?;
        let (h, w) = units.dim();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(w as u32, h as u32, units.iter().copied().collect()).expect("buffer size");
        buf.save(path).map_err(|e| codec_error(path, e))
    }

    pub fn load_png(path: &Path, scale: f64) -> Result<Self> {
        let img = image::open(path).map_err(|e| codec_error(path, e))?;
        let luma = match img {
            image::DynamicImage::ImageLuma16(b) => b,
            other => {
                return Err(Error::Integrity(format!(
                    "{}: depth map must be 16-bit single-channel PNG, found {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = luma.dimensions();
        let units = Array2::from_shape_vec((h as usize, w as usize), luma.into_raw()).expect("buffer size");
        Self::new(Self::from_units(&units, scale).values)
    }
}

/// RGB tactile image with every value in `[-1, 1]`, layout `[channel, row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileImage {
    data: Array3<f32>,
}

impl TactileImage {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        ensure!(c == CHANNELS, Validation, "tactile image must have {CHANNELS} channels, got {c}");
        ensure!(h >= MIN_SIDE && w >= MIN_SIDE, Validation, "tactile image {h}x{w} smaller than {MIN_SIDE}x{MIN_SIDE}");
        ensure!(
            data.iter().all(|v| (-1.0..=1.0).contains(v)),
            Validation,
            "tactile image values must lie in [-1, 1]"
        );
        Ok(Self { data })
    }

    /// Builds an image from values in `[0, 1]` per channel.
    pub fn from_unit(unit: &Array3<f32>) -> Result<Self> {
        Self::new(unit.mapv(|v| 2.0 * v - 1.0))
    }

    /// Clamps into `[-1, 1]` instead of rejecting.
    pub fn from_clamped(data: Array3<f32>) -> Result<Self> {
        Self::new(data.mapv(|v| if v.is_nan() { v } else { v.clamp(-1.0, 1.0) }))
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(Array3::from_elem((CHANNELS, height, width), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Values mapped to `[0, 1]`.
    pub fn to_unit(&self) -> Array3<f64> {
        self.data.mapv(|v| (v as f64 + 1.0) / 2.0)
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let mut data = Array3::<f32>::zeros((CHANNELS, h as usize, w as usize));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..CHANNELS {
                data[[c, y as usize, x as usize]] = normalize_value(px.0[c] as f32)?;
            }
        }
        Self::new(data)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = self.dims();
        let mut img = RgbImage::new(w as u32, h as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let mut rgb = [0u8; CHANNELS];
            for (c, v) in rgb.iter_mut().enumerate() {
                *v = denormalize_value(self.data[[c, y as usize, x as usize]]).expect("validated range");
            }
            *px = Rgb(rgb);
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| codec_error(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| codec_error(path, e))?;
        ensure!(
            matches!(img, image::DynamicImage::ImageRgb8(_) | image::DynamicImage::ImageRgba8(_)),
            Integrity,
            "{}: tactile image must be 8-bit RGB PNG, found {:?}",
            path.display(),
            img.color()
        );
        Self::from_rgb8(&img.to_rgb8())
    }
}

pub(crate) fn codec_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Integrity(format!("{}: {other}", path.display())),
    }
}

/// Maps a raw intensity in `[0, 255]` to `[-1, 1]`.
pub fn normalize_value(v: f32) -> Result<f32> {
    ensure!((0.0..=255.0).contains(&v), Validation, "raw intensity {v} outside [0, 255]");
    Ok(v / 127.5 - 1.0)
}

/// Inverse of [`normalize_value`] with round-half-up.
pub fn denormalize_value(v: f32) -> Result<u8> {
    ensure!((-1.0..=1.0).contains(&v), Validation, "normalised value {v} outside [-1, 1]");
    Ok(((v + 1.0) * 127.5 + 0.5).floor().min(255.0) as u8)
}

/// Normalises a raw `[channel, row, col]` image with values in `[0, 255]`.
pub fn normalize_image(raw: ArrayView3<f32>) -> Result<TactileImage> {
    let mut out = Array3::<f32>::zeros(raw.raw_dim());
    for (o, v) in out.iter_mut().zip(raw.iter()) {
        *o = normalize_value(*v)?;
    }
    TactileImage::new(out)
}

pub fn denormalize_image(img: &TactileImage) -> Array3<u8> {
    img.data.mapv(|v| denormalize_value(v).expect("validated range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(normalize_value(0.0).unwrap(), -1.0);
        assert_eq!(normalize_value(255.0).unwrap(), 1.0);
        assert_eq!(normalize_value(127.5).unwrap(), 0.0);
        assert_eq!(denormalize_value(-1.0).unwrap(), 0);
        assert_eq!(denormalize_value(1.0).unwrap(), 255);
        assert_eq!(denormalize_value(0.0).unwrap(), 128);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(matches!(normalize_value(255.5), Err(Error::Validation(_))));
        assert!(matches!(normalize_value(-0.1), Err(Error::Validation(_))));
        assert!(matches!(normalize_value(f32::NAN), Err(Error::Validation(_))));
        assert!(matches!(denormalize_value(1.01), Err(Error::Validation(_))));
        assert!(TactileImage::new(Array3::from_elem((3, 8, 8), 1.5)).is_err());
        assert!(TactileImage::new(Array3::zeros((1, 8, 8))).is_err());
    }

    proptest! {
        #[test]
        fn normalization_round_trips(raw in proptest::collection::vec(0u8..=255, 3 * 8 * 8)) {
            let arr = Array3::from_shape_vec((3, 8, 8), raw.iter().map(|v| *v as f32).collect()).unwrap();
            let img = normalize_image(arr.view()).unwrap();
            let back = denormalize_image(&img);
            for (a, b) in raw.iter().zip(back.iter()) {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = TactileImage::new(Array3::from_shape_fn((3, 8, 9), |(c, y, x)| {
            normalize_value(((c * 70 + y * 13 + x * 7) % 256) as f32).unwrap()
        }))
        .unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(TactileImage::load_png(&p).unwrap(), img);

        let depth = DepthMap::new(Array2::from_shape_fn((8, 9), |(y, x)| 0.03 - 1e-5 * (x + y) as f64)).unwrap();
        let q = depth.quantized(1e-6).unwrap();
        let p = dir.path().join("d.png");
        q.save_png(&p, 1e-6).unwrap();
        assert_eq!(DepthMap::load_png(&p, 1e-6).unwrap(), q);
        assert!(matches!(DepthMap::load_png(&dir.path().join("a.png"), 1e-6), Err(Error::Integrity(_))));
    }

    #[test]
    fn depth_validation() {
        assert!(DepthMap::plane(4, 8, 0.03).is_err());
        assert!(DepthMap::plane(8, 8, -0.01).is_err());
        assert!(DepthMap::new(Array2::from_elem((8, 8), f64::NAN)).is_err());
        assert!(DepthMap::plane(8, 8, 1.0).unwrap().to_units(1e-6).is_err());
    }
}
