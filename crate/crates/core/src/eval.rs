//! Applying a trained sim-to-real generator and scoring the result against
//! real images: SSIM, MAE, difference maps and texture leakage.
//!
//! All metrics work on images mapped to `[0, 1]`.

use std::path::{Path, PathBuf};

use image::GrayImage;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::SamplePair;
use crate::error::{ensure, Error, Result};
use crate::image::{codec_error, TactileImage};
use crate::mask::ContactMask;
use crate::models::{stack, unbatch, Generator};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Images per inference batch in [`adapt_all`].
const ADAPT_BATCH: usize = 16;

fn check_input(g: &Generator, img: &TactileImage) -> Result<()> {
    let n = g.spec().size;
    ensure!(
        img.dims() == (n, n) && img.data().shape()[0] == g.spec().channels,
        Validation,
        "image is {:?}x{:?} but the generator expects {}x{n}x{n}",
        img.data().shape()[0],
        img.dims(),
        g.spec().channels
    );
    Ok(())
}

/// Maps one simulated image to the real domain, with dropout off.
pub fn adapt(g: &Generator, sim: &TactileImage) -> Result<TactileImage> {
    Ok(adapt_all(g, std::slice::from_ref(sim))?.remove(0))
}

pub fn adapt_all(g: &Generator, sims: &[TactileImage]) -> Result<Vec<TactileImage>> {
    let mut out = Vec::with_capacity(sims.len());
    for chunk in sims.chunks(ADAPT_BATCH) {
        for img in chunk {
            check_input(g, img)?;
        }
        let refs: Vec<_> = chunk.iter().collect();
        let y = g.infer(&stack(&refs));
        ensure!(y.iter().all(|v| v.is_finite()), Numerical, "generator produced non-finite pixels");
        out.extend(unbatch(&y)?);
    }
    Ok(out)
}

fn same_dims(a: &TactileImage, b: &TactileImage) -> Result<()> {
    ensure!(
        a.data().dim() == b.data().dim(),
        Validation,
        "image shapes differ: {:?} vs {:?}",
        a.data().dim(),
        b.data().dim()
    );
    Ok(())
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(x: ArrayView2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for r in 0..h {
        for c in 0..ow {
            rows[[r, c]] = (0..n).map(|i| k[i] * x[[r, c + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for r in 0..oh {
        for c in 0..ow {
            out[[r, c]] = (0..n).map(|i| k[i] * rows[[r + i, c]]).sum();
        }
    }
    out
}

fn ssim_channel(a: ArrayView2<f64>, b: ArrayView2<f64>, k: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = filter_valid(a, k);
    let mu_b = filter_valid(b, k);
    let aa = filter_valid((&a * &a).view(), k);
    let bb = filter_valid((&b * &b).view(), k);
    let ab = filter_valid((&a * &b).view(), k);
    let mut total = 0.0;
    for (((ma, mb), (saa, sbb)), sab) in mu_a.iter().zip(&mu_b).zip(aa.iter().zip(&bb)).zip(&ab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Mean structural similarity over channels and valid window positions.
pub fn ssim(a: &TactileImage, b: &TactileImage) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.dims();
    ensure!(h >= SSIM_WINDOW && w >= SSIM_WINDOW, Validation, "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}");
    if a == b {
        return Ok(1.0);
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let (ua, ub) = (a.to_unit(), b.to_unit());
    let channels = ua.shape()[0];
    let sum: f64 = (0..channels).map(|c| ssim_channel(ua.index_axis(Axis(0), c), ub.index_axis(Axis(0), c), &k)).sum();
    Ok(sum / channels as f64)
}

/// Mean absolute difference as a percentage of the `[0, 1]` range.
pub fn mae_percent(a: &TactileImage, b: &TactileImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).abs() / 2.0).sum();
    Ok(100.0 * sum / a.data().len() as f64)
}

/// `1 - mean_c |a - b|` per pixel: white where the images agree.
pub fn difference_map(a: &TactileImage, b: &TactileImage) -> Result<Array2<f64>> {
    same_dims(a, b)?;
    let channels = a.data().shape()[0] as f64;
    let diff = (a.data().mapv(f64::from) - b.data().mapv(f64::from)).mapv(|v| v.abs() / 2.0);
    Ok(diff.sum_axis(Axis(0)).mapv(|v| 1.0 - v / channels))
}

pub fn save_difference_map(map: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let raw = map.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer size");
    img.save(path).map_err(|e| codec_error(path, e))
}

fn masked_change(adapted: &TactileImage, sim: &TactileImage, mask: &ContactMask, contact: bool) -> Result<Option<f64>> {
    same_dims(adapted, sim)?;
    ensure!(mask.dims() == adapted.dims(), Validation, "mask is {:?}, images are {:?}", mask.dims(), adapted.dims());
    let (mut sum, mut count) = (0.0, 0usize);
    for ((r, c), m) in mask.values().indexed_iter() {
        if (*m == 1) == contact {
            for ch in 0..adapted.data().shape()[0] {
                sum += (adapted.data()[[ch, r, c]] as f64 - sim.data()[[ch, r, c]] as f64).abs() / 2.0;
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Mean `|adapted - sim|` over background pixels, in `[0, 1]` units.
pub fn texture_leak(adapted: &TactileImage, sim: &TactileImage, mask: &ContactMask) -> Result<f64> {
    masked_change(adapted, sim, mask, false)?
        .ok_or_else(|| Error::Validation("texture leak is undefined when every pixel is in contact".into()))
}

/// Mean `|adapted - sim|` over contact pixels, in `[0, 1]` units.
pub fn contact_change(adapted: &TactileImage, sim: &TactileImage, mask: &ContactMask) -> Result<f64> {
    masked_change(adapted, sim, mask, true)?
        .ok_or_else(|| Error::Validation("contact change is undefined without contact pixels".into()))
}

/// Metrics of one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub ssim: f64,
    pub mae_percent: f64,
    /// Raw simulation against real, for reference.
    pub sim_ssim: f64,
    pub sim_mae_percent: f64,
    pub texture_leak: Option<f64>,
    pub contact_change: Option<f64>,
    pub difference_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub samples: usize,
    pub ssim: f64,
    pub mae_percent: f64,
    pub sim_ssim: f64,
    pub sim_mae_percent: f64,
    /// Means over the samples where the quantity is defined.
    pub texture_leak: Option<f64>,
    pub contact_change: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: Option<EvalAggregate>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let aggregate = (!rows.is_empty()).then(|| EvalAggregate {
            samples: rows.len(),
            ssim: mean(rows.iter().map(|r| r.ssim)).unwrap(),
            mae_percent: mean(rows.iter().map(|r| r.mae_percent)).unwrap(),
            sim_ssim: mean(rows.iter().map(|r| r.sim_ssim)).unwrap(),
            sim_mae_percent: mean(rows.iter().map(|r| r.sim_mae_percent)).unwrap(),
            texture_leak: mean(rows.iter().filter_map(|r| r.texture_leak)),
            contact_change: mean(rows.iter().filter_map(|r| r.contact_change)),
        });
        Self { rows, aggregate }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))
    }

    /// Per-sample table, one row per sample.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::Integrity(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for row in &self.rows {
            w.serialize(row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Scores `adapter` on paired samples. Difference maps against the real
/// image are written to `maps_dir` when given.
pub fn evaluate_with<F>(adapter: F, pairs: &[SamplePair], maps_dir: Option<&Path>) -> Result<EvalReport>
where
    F: Fn(&[TactileImage]) -> Result<Vec<TactileImage>>,
{
    for p in pairs {
        p.require_real()?;
    }
    if let Some(dir) = maps_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let sims: Vec<TactileImage> = pairs.iter().map(|p| p.sim.clone()).collect();
    let adapted = if sims.is_empty() { Vec::new() } else { adapter(&sims)? };
    ensure!(adapted.len() == pairs.len(), Validation, "adapter returned {} images for {} inputs", adapted.len(), pairs.len());
    let mut rows = Vec::with_capacity(pairs.len());
    for (p, a) in pairs.iter().zip(&adapted) {
        let real = p.require_real()?;
        let difference_map = match maps_dir {
            Some(dir) => {
                let path = dir.join(format!("{}.png", p.id));
                save_difference_map(&difference_map(a, real)?, &path)?;
                Some(path)
            }
            None => None,
        };
        rows.push(EvalRow {
            id: p.id.clone(),
            ssim: ssim(a, real)?,
            mae_percent: mae_percent(a, real)?,
            sim_ssim: ssim(&p.sim, real)?,
            sim_mae_percent: mae_percent(&p.sim, real)?,
            texture_leak: masked_change(a, &p.sim, &p.mask, false)?,
            contact_change: masked_change(a, &p.sim, &p.mask, true)?,
            difference_map,
        });
    }
    Ok(EvalReport::from_rows(rows))
}

pub fn evaluate_pairs(g: &Generator, pairs: &[SamplePair], maps_dir: Option<&Path>) -> Result<EvalReport> {
    evaluate_with(|sims| adapt_all(g, sims), pairs, maps_dir)
}
