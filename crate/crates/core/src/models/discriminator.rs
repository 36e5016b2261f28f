//! PatchGAN discriminator.
//!
//! `stride_layers` blocks of 4×4 stride-2 convolution, instance norm (not on
//! the first block) and leaky ReLU, then a 4×4 stride-1 block with norm and
//! leaky ReLU, then a 4×4 stride-1 convolution to one logit channel. Each
//! output cell scores one overlapping input patch.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tacgap_nn::activation::{leaky_relu, leaky_relu_backward};
use tacgap_nn::conv::Conv2dCache;
use tacgap_nn::norm::InstanceNormCache;
use tacgap_nn::param::join;
use tacgap_nn::{conv_out_len, Conv2d, InstanceNorm2d, Module, Param};

use super::INIT_STD;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub size: usize,
    pub channels: usize,
    pub base_filters: usize,
    pub max_filters: usize,
    pub stride_layers: usize,
    pub leaky_slope: f32,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { size: 256, channels: 3, base_filters: 64, max_filters: 512, stride_layers: 4, leaky_slope: 0.2 }
    }
}

/// `(kernel, stride, pad)` of every convolution, in order.
pub fn layer_geometry(stride_layers: usize) -> Vec<(usize, usize, usize)> {
    let mut layers = vec![(4, 2, 1); stride_layers];
    layers.extend([(4, 1, 1), (4, 1, 1)]);
    layers
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels >= 1 && self.base_filters >= 1, Config, "channel counts must be positive");
        ensure!(self.max_filters >= self.base_filters, Config, "max filters below base filters");
        ensure!(self.stride_layers >= 1, Config, "discriminator needs at least one stride-2 block");
        let patch = self.patch_size();
        ensure!(
            patch.is_some_and(|p| p >= 1),
            Config,
            "discriminator with {} stride-2 blocks has no output patch at input size {}",
            self.stride_layers,
            self.size
        );
        Ok(())
    }

    /// Side of the output logit grid, or `None` if a layer has no output.
    pub fn patch_size(&self) -> Option<usize> {
        layer_geometry(self.stride_layers)
            .into_iter()
            .try_fold(self.size, |n, (k, s, p)| conv_out_len(n, k, s, p).filter(|&o| o >= 1))
    }

    pub fn filters(&self, i: usize) -> usize {
        self.base_filters.saturating_mul(1usize.checked_shl(i as u32).unwrap_or(usize::MAX)).min(self.max_filters)
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv: Conv2d,
    norm: Option<InstanceNorm2d>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    blocks: Vec<Block>,
    head: Conv2d,
}

struct BlockCache {
    conv: Conv2dCache,
    norm: Option<InstanceNormCache>,
    out: Array4<f32>,
}

pub struct DiscriminatorCache {
    blocks: Vec<BlockCache>,
    head: Conv2dCache,
    logits: Array4<f32>,
}

impl DiscriminatorCache {
    /// Logits `[n, 1, S, S]`.
    pub fn logits(&self) -> &Array4<f32> {
        &self.logits
    }
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::new();
        let mut in_ch = spec.channels;
        for (i, (k, s, p)) in layer_geometry(spec.stride_layers).into_iter().take(spec.stride_layers + 1).enumerate() {
            let out_ch = spec.filters(i);
            let normalised = i > 0;
            blocks.push(Block {
                conv: Conv2d::new(in_ch, out_ch, k, s, p, !normalised),
                norm: normalised.then(|| InstanceNorm2d::new(out_ch)),
            });
            in_ch = out_ch;
        }
        let mut d = Self { head: Conv2d::new(in_ch, 1, 4, 1, 1, true), spec, blocks };
        d.init_weights(rng);
        Ok(d)
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn init_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for b in &mut self.blocks {
            b.conv.init_normal(INIT_STD, rng);
            if let Some(n) = &mut b.norm {
                n.reset();
            }
        }
        self.head.init_normal(INIT_STD, rng);
    }

    pub fn forward(&self, x: &Array4<f32>) -> DiscriminatorCache {
        let (_, c, h, w) = x.dim();
        assert_eq!((c, h, w), (self.spec.channels, self.spec.size, self.spec.size), "discriminator input dims");
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, conv) = b.conv.forward(&cur);
            let (y, norm) = match &b.norm {
                Some(n) => {
                    let (y, c) = n.forward(&y);
                    (y, Some(c))
                }
                None => (y, None),
            };
            let out = leaky_relu(&y, self.spec.leaky_slope);
            cur = out.clone();
            caches.push(BlockCache { conv, norm, out });
        }
        let (logits, head) = self.head.forward(&cur);
        DiscriminatorCache { blocks: caches, head, logits }
    }

    pub fn logits(&self, x: &Array4<f32>) -> Array4<f32> {
        self.forward(x).logits
    }

    /// Back-propagates a logit gradient; returns the input gradient.
    pub fn backward(&mut self, cache: &DiscriminatorCache, dlogits: &Array4<f32>, param_grads: bool) -> Array4<f32> {
        let mut grad = self.head.backward(&cache.head, dlogits, param_grads);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            let mut d = leaky_relu_backward(&c.out, &grad, self.spec.leaky_slope);
            if let (Some(n), Some(nc)) = (&mut b.norm, &c.norm) {
                d = n.backward(nc, &d, param_grads);
            }
            grad = b.conv.backward(&c.conv, &d, param_grads);
        }
        grad
    }
}

impl Module for Discriminator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block.{i}"));
            b.conv.visit_params(&join(&p, "conv"), f);
            if let Some(n) = &b.norm {
                n.visit_params(&join(&p, "norm"), f);
            }
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block.{i}"));
            b.conv.visit_params_mut(&join(&p, "conv"), f);
            if let Some(n) = &mut b.norm {
                n.visit_params_mut(&join(&p, "norm"), f);
            }
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}
