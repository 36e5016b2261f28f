//! A small CPU neural-network engine with explicit, cache-based backward passes.
//!
//! Every layer exposes `forward(&self, x) -> (y, cache)` and
//! `backward(&mut self, &cache, dy) -> dx`. Caches are plain values, so one
//! network can be applied several times in a step (as cycle-consistent
//! training requires) and each application is back-propagated independently.
//! Parameter gradients accumulate into [`Param::grad`] until cleared.
//!
//! Activations are NCHW `Array4<f32>`. Kernels are single-threaded and their
//! reduction order is fixed, so results are bit-reproducible.

pub mod activation;
pub mod adam;
pub mod archive;
pub mod conv;
pub mod dropout;
pub mod init;
pub mod linear;
pub mod norm;
pub mod param;

pub use adam::{Adam, AdamConfig};
pub use archive::{ArchiveError, TensorArchive};
pub use conv::{Conv2d, ConvTranspose2d};
pub use dropout::Dropout;
pub use linear::Linear;
pub use norm::{BatchNorm1d, InstanceNorm2d};
pub use param::{Module, Param};

/// Output length of a strided convolution along one axis.
///
/// Returns `None` when the padded input is smaller than the kernel.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn conv_transpose_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((input.checked_sub(1)?) * stride + kernel).checked_sub(2 * pad)
}
