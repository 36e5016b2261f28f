//! Procedural paired dataset: catalogue indenters tapped over a grid of
//! positions and depths, rendered once plainly and once with fabrication
//! texture.
//!
//! Sample `i` has class `i % K`. With `j = i / K`, its grid position is
//! `j % grid_positions`, its tap level `(j / grid_positions) % tap_levels`,
//! and it belongs to the test split when `j % test_every == test_every - 1`.
//! With 21 classes, 9 positions and 11 levels, 2079 samples enumerate every
//! combination exactly once.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, SampleEntry};
use super::render::{render_pseudo_real, render_simulated, LightConfig, TextureSpec};
use super::synth::{catalog_object, synth_depth_map, Pose, SensorGeometry, CATALOG_SIZE};
use super::{stored_threshold, SampleMeta, SamplePair, Split};
use crate::error::{ensure, Error, Result};
use crate::image::TactileImage;
use crate::mask::mask_from_depth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub count: usize,
    /// Square image side in pixels.
    pub resolution: usize,
    pub seed: u64,
    pub texture: TextureSpec,
    /// Shallowest and deepest tap, metres.
    pub tap_range: (f64, f64),
    pub tap_levels: usize,
    /// Side of the square grid of tap positions.
    pub grid_side: usize,
    /// Distance between neighbouring grid positions, metres.
    pub grid_spacing: f64,
    pub test_every: usize,
    pub depth_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            count: 200,
            resolution: 64,
            seed: 0,
            texture: TextureSpec::default(),
            tap_range: (0.2e-3, 1.5e-3),
            tap_levels: 11,
            grid_side: 3,
            grid_spacing: 0.5e-3,
            test_every: 5,
            depth_scale: 1e-6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (2..=CATALOG_SIZE).contains(&self.classes),
            Config,
            "class count must lie in 2..={CATALOG_SIZE}, got {}",
            self.classes
        );
        ensure!(self.resolution >= crate::image::MIN_SIDE, Config, "resolution {} too small", self.resolution);
        ensure!(self.tap_levels >= 1 && self.grid_side >= 1, Config, "tap levels and grid side must be positive");
        ensure!(self.test_every >= 2, Config, "test_every must be at least 2");
        ensure!(
            0.0 <= self.tap_range.0 && self.tap_range.0 <= self.tap_range.1,
            Config,
            "tap range must be ordered and non-negative"
        );
        ensure!(self.depth_scale > 0.0, Config, "depth scale must be positive");
        Ok(())
    }

    fn grid_positions(&self) -> usize {
        self.grid_side * self.grid_side
    }

    fn tap_depth(&self, level: usize) -> f64 {
        if self.tap_levels == 1 {
            return self.tap_range.0;
        }
        let t = level as f64 / (self.tap_levels - 1) as f64;
        self.tap_range.0 + t * (self.tap_range.1 - self.tap_range.0)
    }

    fn layout(&self, index: usize) -> (usize, SampleMeta) {
        let class = index % self.classes;
        let j = index / self.classes;
        let split = if j % self.test_every == self.test_every - 1 { Split::Test } else { Split::Train };
        let meta =
            SampleMeta { grid_position: j % self.grid_positions(), tap_index: (j / self.grid_positions()) % self.tap_levels, split };
        (class, meta)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| catalog_object(c).name).collect()
    }
}

fn sample_id(class_name: &str, index: usize) -> String {
    format!("{class_name}_{index:05}")
}

/// Round trip through 8-bit storage so in-memory samples match loaded ones.
fn stored(img: TactileImage) -> Result<TactileImage> {
    TactileImage::from_rgb8(&img.to_rgb8())
}

/// Generates sample `index` in memory, exactly as it loads back from disk.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> Result<SamplePair> {
    cfg.validate()?;
    let (class, meta) = cfg.layout(index);
    let n = cfg.resolution;
    let sensor = SensorGeometry::for_resolution(n);
    let indenter = catalog_object(class);
    let side = cfg.grid_side;
    let (gx, gy) = (meta.grid_position % side, meta.grid_position / side);
    let offset = |g: usize| (g as f64 - (side as f64 - 1.0) / 2.0) * cfg.grid_spacing / sensor.pixel_pitch;
    let centre = Pose::centered(n, n).center;
    let pose = Pose { center: (centre.0 + offset(gx), centre.1 + offset(gy)), rotation: 0.0 };
    let depth = synth_depth_map(&indenter, pose, cfg.tap_depth(meta.tap_index), (n, n), sensor)
        .map_err(|e| Error::Config(format!("sample {index} ({}): {e}", indenter.name)))?
        .quantized(cfg.depth_scale)?;
    let lights = LightConfig::gelsight(sensor.pixel_pitch);
    let threshold = stored_threshold(sensor.elastomer_depth, cfg.depth_scale);
    let sim = stored(render_simulated(&depth, &lights)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let real = stored(render_pseudo_real(&depth, threshold, &cfg.texture, &lights, &mut rng)?)?;
    let mask = mask_from_depth(&depth, threshold)?;
    Ok(SamplePair { id: sample_id(&indenter.name, index), depth, sim, real: Some(real), mask, label: class, meta })
}

/// Writes `cfg.count` samples under `out_dir/<class>/` and a
/// `manifest.json` with root `.`; returns the manifest rooted at `out_dir`.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let names = cfg.class_names();
    let sensor = SensorGeometry::for_resolution(cfg.resolution);
    let mut manifest =
        DatasetManifest::new(".".into(), names.clone(), sensor.elastomer_depth, cfg.depth_scale, [cfg.resolution; 2]);
    for name in &names {
        let dir = out_dir.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for index in 0..cfg.count {
        let pair = synth_sample(cfg, index)?;
        let class = &names[pair.label];
        let rel = |kind: &str| Path::new(class).join(format!("{}.{kind}.png", pair.id));
        pair.sim.save_png(&out_dir.join(rel("sim")))?;
        pair.real.as_ref().expect("synthetic pairs are paired").save_png(&out_dir.join(rel("real")))?;
        pair.depth.save_png(&out_dir.join(rel("depth")), cfg.depth_scale)?;
        manifest.samples.push(SampleEntry {
            id: pair.id.clone(),
            label: pair.label,
            split: pair.meta.split,
            grid_position: pair.meta.grid_position,
            tap_index: pair.meta.tap_index,
            sim: rel("sim"),
            real: Some(rel("real")),
            depth: rel("depth"),
        });
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    manifest.root = out_dir.to_path_buf();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;
    use std::collections::BTreeSet;

    #[test]
    fn layout_enumerates_every_combination() {
        let cfg = SynthConfig { classes: 21, count: 2079, ..Default::default() };
        let mut seen = BTreeSet::new();
        for i in 0..cfg.count {
            let (class, meta) = cfg.layout(i);
            assert!(seen.insert((class, meta.grid_position, meta.tap_index)));
        }
        assert_eq!(seen.len(), 21 * 9 * 11);
    }

    #[test]
    fn single_sample_round_trips_with_exact_mask() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { count: 1, resolution: 32, ..Default::default() };
        let manifest = generate_dataset(&cfg, dir.path()).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        let expected = synth_sample(&cfg, 0).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(expected.mask.contact_pixels() > 0);
        assert_eq!(loaded[0].mask, expected.mask);
        assert_eq!(loaded[0], expected);
    }

    #[test]
    fn splits_are_disjoint_and_near_eighty_twenty() {
        let cfg = SynthConfig::default();
        let test = (0..cfg.count).filter(|&i| cfg.layout(i).1.split == Split::Test).count();
        assert_eq!(test, 40);
    }

    #[test]
    fn real_differs_from_sim_inside_contact() {
        let cfg = SynthConfig { resolution: 32, ..Default::default() };
        let pair = synth_sample(&cfg, 40).unwrap();
        let real = pair.real.unwrap();
        let mut inside = 0.0;
        for ((r, c), m) in pair.mask.values().indexed_iter() {
            if *m == 1 {
                inside += (0..3).map(|ch| (real.data()[[ch, r, c]] - pair.sim.data()[[ch, r, c]]).abs()).sum::<f32>();
            }
        }
        assert!(inside > 0.0);
    }

    #[test]
    fn too_many_classes_rejected() {
        let cfg = SynthConfig { classes: 22, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
