//! Phong shading of elastomer depth maps into RGB tactile images, and a
//! "pseudo-real" variant that adds fabrication texture inside the contact
//! region so desk-scale experiments have a real domain with known ground truth.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{DepthMap, TactileImage, CHANNELS};

/// A directional coloured light. `direction` points from the surface towards
/// the light, with a positive component towards the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: [f64; 3],
    pub color: [f64; 3],
}

impl Light {
    /// Light at `azimuth` (radians, 0 = +x / right, π = left) raised
    /// `elevation` radians above the elastomer plane.
    pub fn from_angles(azimuth: f64, elevation: f64, color: [f64; 3]) -> Self {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Self { direction: [ce * ca, ce * sa, se], color }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightConfig {
    pub ambient: [f64; 3],
    pub lights: Vec<Light>,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
    /// Metres per pixel, needed to turn depth differences into slopes.
    pub pixel_pitch: f64,
}

impl LightConfig {
    /// Red light from the left, green and blue from the two right-hand
    /// diagonals, all 30° above the gel.
    pub fn gelsight(pixel_pitch: f64) -> Self {
        use std::f64::consts::PI;
        let elevation = PI / 6.0;
        Self {
            ambient: [0.2, 0.2, 0.2],
            lights: vec![
                Light::from_angles(PI, elevation, [1.0, 0.0, 0.0]),
                Light::from_angles(PI / 3.0, elevation, [0.0, 1.0, 0.0]),
                Light::from_angles(-PI / 3.0, elevation, [0.0, 0.0, 1.0]),
            ],
            diffuse: 0.75,
            specular: 0.2,
            shininess: 12.0,
            pixel_pitch,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure!(!self.lights.is_empty(), Validation, "light configuration has no lights");
        ensure!(self.pixel_pitch > 0.0, Validation, "pixel pitch must be positive");
        for l in &self.lights {
            let n = l.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            ensure!(n > 0.0 && n.is_finite(), Validation, "light direction must be a non-zero vector");
        }
        Ok(())
    }
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Shades a height field (metres towards the camera) into unit-range RGB.
fn shade(height: &Array2<f64>, cfg: &LightConfig) -> Array3<f64> {
    let (h, w) = height.dim();
    let lights: Vec<([f64; 3], [f64; 3])> = cfg.lights.iter().map(|l| (normalize3(l.direction), l.color)).collect();
    let mut out = Array3::<f64>::zeros((CHANNELS, h, w));
    let at = |r: isize, c: isize| height[[r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize]];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let dx = (at(r, c + 1) - at(r, c - 1)) / (2.0 * cfg.pixel_pitch);
            let dy = (at(r + 1, c) - at(r - 1, c)) / (2.0 * cfg.pixel_pitch);
            let n = normalize3([-dx, -dy, 1.0]);
            let mut rgb = cfg.ambient;
            for (l, color) in &lights {
                let ndl = dot(n, *l);
                if ndl <= 0.0 {
                    continue;
                }
                // Reflection of l about n, viewed along +z.
                let refl_z = 2.0 * ndl * n[2] - l[2];
                let spec = cfg.specular * refl_z.max(0.0).powf(cfg.shininess);
                for ch in 0..CHANNELS {
                    rgb[ch] += color[ch] * (cfg.diffuse * ndl + spec);
                }
            }
            for ch in 0..CHANNELS {
                out[[ch, r as usize, c as usize]] = rgb[ch];
            }
        }
    }
    out
}

/// Height towards the camera relative to `reference`. Shading only depends
/// on differences, so both renderers use the same reference to stay bitwise
/// comparable.
fn height_field(depth: &DepthMap, reference: f64) -> Array2<f64> {
    depth.values().mapv(|d| reference - d)
}

fn to_image(unit: &Array3<f64>) -> Result<TactileImage> {
    TactileImage::new(unit.mapv(|v| (2.0 * v.clamp(0.0, 1.0) - 1.0) as f32))
}

/// Phong rendering: ambient plus, per light, diffuse `N·L` and specular
/// `(R·V)^shininess`, with normals from central depth differences.
pub fn render_simulated(depth: &DepthMap, cfg: &LightConfig) -> Result<TactileImage> {
    cfg.validate()?;
    let heights = height_field(depth, 0.0);
    to_image(&shade(&heights, cfg))
}

/// Fabrication texture of the "real" domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    /// Peak height of the parallel print-layer ridges, metres.
    pub ridge_amplitude: f64,
    /// Ridge period in pixels.
    pub ridge_period: f64,
    /// Ridge orientation in radians (0 = ridges run vertically).
    pub ridge_angle: f64,
    pub ridge_phase: f64,
    /// Number of random straight scratches.
    pub scratches: usize,
    pub scratch_depth: f64,
    /// Scratch half-width in pixels.
    pub scratch_width: f64,
    /// Maximum relative per-channel gain change applied to the whole image.
    pub illumination_jitter: f64,
    /// Relative extra indentation inside contact, as from a softer gel.
    pub indent_gain: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            ridge_amplitude: 20e-6,
            ridge_period: 4.0,
            ridge_angle: 0.3,
            ridge_phase: 0.0,
            scratches: 0,
            scratch_depth: 10e-6,
            scratch_width: 0.8,
            illumination_jitter: 0.005,
            indent_gain: 1.5,
        }
    }
}

impl TextureSpec {
    pub fn none() -> Self {
        Self { ridge_amplitude: 0.0, scratches: 0, illumination_jitter: 0.0, indent_gain: 0.0, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.ridge_amplitude >= 0.0 && self.scratch_depth >= 0.0 && self.indent_gain >= 0.0,
            Validation,
            "texture amplitudes must be non-negative"
        );
        ensure!(self.ridge_period > 0.0 && self.scratch_width > 0.0, Validation, "texture scales must be positive");
        ensure!(
            (0.0..1.0).contains(&self.illumination_jitter),
            Validation,
            "illumination jitter must lie in [0, 1)"
        );
        Ok(())
    }

    /// Texture height field in metres (towards the camera).
    fn relief<R: Rng + ?Sized>(&self, h: usize, w: usize, rng: &mut R) -> Array2<f64> {
        use std::f64::consts::TAU;
        let (s, c) = self.ridge_angle.sin_cos();
        let mut relief = Array2::from_shape_fn((h, w), |(r, col)| {
            let u = col as f64 * c + r as f64 * s;
            self.ridge_amplitude * (TAU * u / self.ridge_period + self.ridge_phase).sin()
        });
        for _ in 0..self.scratches {
            let (x0, y0) = (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64);
            let theta = rng.random::<f64>() * std::f64::consts::PI;
            let len = (0.2 + 0.6 * rng.random::<f64>()) * w.min(h) as f64;
            let (ds, dc) = theta.sin_cos();
            for ((r, col), v) in relief.indexed_iter_mut() {
                let (px, py) = (col as f64 - x0, r as f64 - y0);
                let along = px * dc + py * ds;
                let across = -px * ds + py * dc;
                if along.abs() <= len / 2.0 {
                    *v -= self.scratch_depth * (-(across / self.scratch_width).powi(2)).exp();
                }
            }
        }
        relief
    }
}

/// Renders the pseudo-real image: contact pixels (`depth < elastomer_depth`)
/// are shaded from the depth deepened by `indent_gain` and perturbed by the
/// fabrication texture, the background is shaded exactly as in simulation,
/// and one random global per-channel gain in `[1 − jitter, 1 + jitter]` is
/// applied to everything.
pub fn render_pseudo_real<R: Rng + ?Sized>(
    depth: &DepthMap,
    elastomer_depth: f64,
    texture: &TextureSpec,
    cfg: &LightConfig,
    rng: &mut R,
) -> Result<TactileImage> {
    cfg.validate()?;
    texture.validate()?;
    let (h, w) = depth.dims();
    let heights = height_field(depth, 0.0);
    let contact = depth.values().mapv(|d| d < elastomer_depth);
    let relief = texture.relief(h, w, rng);
    let mut textured = heights.clone();
    ndarray::Zip::from(&mut textured).and(&relief).and(&contact).and(depth.values()).for_each(|t, r, inside, d| {
        if *inside {
            *t += r + texture.indent_gain * (elastomer_depth - d);
        }
    });
    let plain = shade(&heights, cfg);
    let rough = shade(&textured, cfg);
    let gains: Vec<f64> = (0..CHANNELS)
        .map(|_| 1.0 + texture.illumination_jitter * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let out = Array3::from_shape_fn((CHANNELS, h, w), |(ch, r, c)| {
        let base = if contact[[r, c]] { rough[[ch, r, c]] } else { plain[[ch, r, c]] };
        base * gains[ch]
    });
    to_image(&out)
}
