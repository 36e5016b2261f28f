//! Tactile samples: in-memory records, on-disk dataset loading,
//! augmentation and a procedural synthetic generator.

pub mod augment;
pub mod generate;
pub mod manifest;
pub mod render;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use augment::{augment_pair, AugmentationConfig};
pub use generate::{generate_dataset, synth_sample, SynthConfig};
pub use manifest::{DatasetManifest, SampleEntry};
pub use render::{render_pseudo_real, render_simulated, LightConfig, TextureSpec};
pub use synth::{catalog_object, synth_depth_map, Indenter, Pose, Primitive, SensorGeometry};

use crate::error::{Error, Result};
use crate::image::{DepthMap, TactileImage};
use crate::mask::{mask_from_depth, ContactMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleMeta {
    pub grid_position: usize,
    pub tap_index: usize,
    pub split: Split,
}

/// One aligned record. `real` is absent for unpaired data.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub depth: DepthMap,
    pub sim: TactileImage,
    pub real: Option<TactileImage>,
    pub mask: ContactMask,
    pub label: usize,
    pub meta: SampleMeta,
}

impl SamplePair {
    pub fn dims(&self) -> (usize, usize) {
        self.sim.dims()
    }

    /// The real image, or a validation error naming the sample.
    pub fn require_real(&self) -> Result<&TactileImage> {
        self.real
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("sample `{}` has no real image; paired data is required", self.id)))
    }
}

/// The mask threshold as it survives integer depth storage: depths and the
/// threshold land on the same grid, so `<` compares like with like.
pub fn stored_threshold(elastomer_depth: f64, depth_scale: f64) -> f64 {
    (elastomer_depth / depth_scale).round() * depth_scale
}

/// Loads one manifest entry. Missing or undecodable files become load errors
/// naming the sample; dimension mismatches become integrity errors.
pub fn load_sample(manifest: &DatasetManifest, entry: &SampleEntry) -> Result<SamplePair> {
    let named = |e: Error| match e {
        Error::Io { path, source } => Error::Load { sample: entry.id.clone(), reason: format!("{path}: {source}") },
        Error::Integrity(msg) => Error::Load { sample: entry.id.clone(), reason: msg },
        other => other,
    };
    let depth = DepthMap::load_png(&manifest.resolve(&entry.depth), manifest.depth_scale).map_err(named)?;
    let sim = TactileImage::load_png(&manifest.resolve(&entry.sim)).map_err(named)?;
    let real = match &entry.real {
        Some(rel) => Some(TactileImage::load_png(&manifest.resolve(rel)).map_err(named)?),
        None => None,
    };
    let dims = depth.dims();
    let mismatch = sim.dims() != dims || real.as_ref().is_some_and(|r| r.dims() != dims);
    if mismatch {
        return Err(Error::Integrity(format!(
            "sample `{}`: image and depth dimensions differ (depth {:?}, sim {:?})",
            entry.id,
            dims,
            sim.dims()
        )));
    }
    let mask = mask_from_depth(&depth, stored_threshold(manifest.elastomer_depth, manifest.depth_scale))?;
    Ok(SamplePair {
        id: entry.id.clone(),
        depth,
        sim,
        real,
        mask,
        label: entry.label,
        meta: SampleMeta { grid_position: entry.grid_position, tap_index: entry.tap_index, split: entry.split },
    })
}

/// Loads every sample of a validated manifest in manifest order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<SamplePair>> {
    manifest.validate()?;
    manifest.samples.iter().map(|e| load_sample(manifest, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_loads_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(dir.path().into(), vec!["a".into(), "b".into()], 0.03, 1e-6, [16, 16]);
        assert!(load_dataset(&m).unwrap().is_empty());
    }

    #[test]
    fn threshold_snaps_to_storage_grid() {
        assert_eq!(stored_threshold(0.03, 1e-6), 30000.0 * 1e-6);
        assert_eq!(stored_threshold(0.0300004, 1e-6), 30000.0 * 1e-6);
    }

    #[test]
    fn shape_mismatch_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        DepthMap::plane(16, 16, 0.03).unwrap().save_png(&root.join("d.png"), 1e-6).unwrap();
        TactileImage::filled(12, 16, 0.0).unwrap().save_png(&root.join("s.png")).unwrap();
        let mut m = DatasetManifest::new(root.into(), vec!["a".into(), "b".into()], 0.03, 1e-6, [16, 16]);
        m.samples.push(SampleEntry {
            id: "x".into(),
            label: 0,
            split: Split::Train,
            grid_position: 0,
            tap_index: 0,
            sim: "s.png".into(),
            real: None,
            depth: "d.png".into(),
        });
        assert!(matches!(load_dataset(&m), Err(Error::Integrity(_))));
    }

    #[test]
    fn corrupt_file_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("d.png"), b"not a png").unwrap();
        TactileImage::filled(16, 16, 0.0).unwrap().save_png(&root.join("s.png")).unwrap();
        let mut m = DatasetManifest::new(root.into(), vec!["a".into(), "b".into()], 0.03, 1e-6, [16, 16]);
        m.samples.push(SampleEntry {
            id: "broken".into(),
            label: 0,
            split: Split::Train,
            grid_position: 0,
            tap_index: 0,
            sim: "s.png".into(),
            real: None,
            depth: "d.png".into(),
        });
        match load_dataset(&m) {
            Err(Error::Load { sample, .. }) => assert_eq!(sample, "broken"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
