//! U-Net generators and PatchGAN discriminators.

pub mod discriminator;
pub mod generator;

use ndarray::{Array3, Array4, Axis};
use tacgap_nn::{Module, TensorArchive};

pub use discriminator::{Discriminator, DiscriminatorCache, DiscriminatorSpec};
pub use generator::{Generator, GeneratorCache, GeneratorSpec};

use crate::error::{Error, Result};
use crate::image::TactileImage;

/// Standard deviation of the normal initialisation of every kernel.
pub const INIT_STD: f32 = 0.02;

/// Adds a batch axis to one image.
pub fn batch_of(img: &TactileImage) -> Array4<f32> {
    img.data().clone().insert_axis(Axis(0))
}

/// Stacks equally sized images into one batch.
pub fn stack(imgs: &[&TactileImage]) -> Array4<f32> {
    let views: Vec<_> = imgs.iter().map(|i| i.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal image dims")
}

/// Splits a generator output batch back into images.
pub fn unbatch(x: &Array4<f32>) -> Result<Vec<TactileImage>> {
    x.outer_iter().map(|s| TactileImage::from_clamped(s.to_owned())).collect()
}

/// First image of a batch.
pub fn first_image(x: &Array4<f32>) -> Result<TactileImage> {
    let s: Array3<f32> = x.index_axis(Axis(0), 0).to_owned();
    TactileImage::from_clamped(s)
}

/// Copies every parameter of `module` into `archive` under `prefix`.
pub fn export_params<M: Module + ?Sized>(module: &M, prefix: &str, archive: &mut TensorArchive) {
    for (name, value) in module.named_values(prefix) {
        archive.insert(name, value);
    }
}

/// Overwrites every parameter of `module` from `archive`, checking shapes.
pub fn import_params<M: Module + ?Sized>(module: &mut M, prefix: &str, archive: &TensorArchive) -> Result<()> {
    let mut failure = None;
    module.visit_params_mut(prefix, &mut |name, p| {
        if failure.is_some() {
            return;
        }
        match archive.get(name) {
            Ok(t) if t.shape() == p.value.shape() => p.value.assign(t),
            Ok(t) => {
                failure = Some(Error::Integrity(format!(
                    "tensor `{name}` has shape {:?}, network expects {:?}",
                    t.shape(),
                    p.value.shape()
                )))
            }
            Err(e) => failure = Some(e.into()),
        }
    });
    failure.map_or(Ok(()), Err)
}
