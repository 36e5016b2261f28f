//! JSON dataset manifest.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "root": ".",
//!   "classes": ["sphere", "cylinder_h"],
//!   "elastomer_depth": 0.03,
//!   "depth_scale": 1e-6,
//!   "resolution": [64, 64],
//!   "image_format": "png-rgb8/png-gray16",
//!   "samples": [
//!     {"id": "sphere_0000", "label": 0, "split": "train", "grid_position": 0, "tap_index": 0,
//!      "sim": "sphere/sphere_0000.sim.png", "real": "sphere/sphere_0000.real.png",
//!      "depth": "sphere/sphere_0000.depth.png"}
//!   ]
//! }
//! ```
//!
//! A relative `root` is resolved against the manifest's own directory;
//! sample paths are resolved against `root`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{ensure, Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const IMAGE_FORMAT: &str = "png-rgb8/png-gray16";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub label: usize,
    pub split: Split,
    #[serde(default)]
    pub grid_position: usize,
    #[serde(default)]
    pub tap_index: usize,
    pub sim: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<PathBuf>,
    pub depth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub root: PathBuf,
    pub classes: Vec<String>,
    /// Mask threshold in metres.
    pub elastomer_depth: f64,
    /// Metres per stored depth unit.
    pub depth_scale: f64,
    /// `[height, width]` of every image.
    pub resolution: [usize; 2],
    pub image_format: String,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn new(root: PathBuf, classes: Vec<String>, elastomer_depth: f64, depth_scale: f64, resolution: [usize; 2]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            root,
            classes,
            elastomer_depth,
            depth_scale,
            resolution,
            image_format: IMAGE_FORMAT.into(),
            samples: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Reads and validates a manifest, resolving `root` against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("malformed manifest {}: {e}", path.display())))?;
        if manifest.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            manifest.root = base.join(&manifest.root);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes the manifest as pretty JSON. `root` is stored as given.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    /// Structural checks, without touching the filesystem.
    pub fn validate_structure(&self) -> Result<()> {
        ensure!(
            self.format_version == FORMAT_VERSION,
            Validation,
            "unsupported manifest format version {}",
            self.format_version
        );
        ensure!(self.classes.len() >= 2, Validation, "manifest needs at least 2 classes, has {}", self.classes.len());
        ensure!(
            self.elastomer_depth > 0.0 && self.elastomer_depth.is_finite(),
            Validation,
            "elastomer depth must be positive"
        );
        ensure!(self.depth_scale > 0.0 && self.depth_scale.is_finite(), Validation, "depth scale must be positive");
        ensure!(
            self.resolution.iter().all(|&s| s >= crate::image::MIN_SIDE),
            Validation,
            "resolution {:?} below the minimum side",
            self.resolution
        );
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            ensure!(ids.insert(s.id.as_str()), Validation, "sample id `{}` appears more than once", s.id);
            ensure!(
                s.label < self.classes.len(),
                Validation,
                "sample `{}` has label {} but only {} classes exist",
                s.id,
                s.label,
                self.classes.len()
            );
        }
        Ok(())
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for s in &self.samples {
            let files = [Some(&s.sim), s.real.as_ref(), Some(&s.depth)];
            for rel in files.into_iter().flatten() {
                let path = self.resolve(rel);
                if !path.is_file() {
                    return Err(Error::Load { sample: s.id.clone(), reason: format!("missing file {}", path.display()) });
                }
            }
        }
        Ok(())
    }

    pub fn is_paired(&self) -> bool {
        self.samples.iter().all(|s| s.real.is_some())
    }

    /// Copy restricted to one split.
    pub fn split(&self, split: Split) -> Self {
        let mut out = self.clone();
        out.samples.retain(|s| s.split == split);
        out
    }
}
