//! U-Net generator.
//!
//! Encoder block `i` is a 4×4 stride-2 convolution to `min(base·2^i, max)`
//! channels, instance norm and leaky ReLU; the first block and a block whose
//! output is 1×1 skip the norm (a single-pixel plane normalises to a
//! constant). Decoder block `j` upsamples with a 4×4 stride-2 transposed
//! convolution, normalises, applies dropout on the first few blocks, then
//! ReLU, and concatenates the mirrored encoder output. A final transposed
//! convolution and `tanh` map back to image channels in `[-1, 1]`.

use ndarray::{concatenate, s, Array4, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use tacgap_nn::activation::{leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward};
use tacgap_nn::conv::{Conv2dCache, ConvTranspose2dCache};
use tacgap_nn::norm::InstanceNormCache;
use tacgap_nn::param::join;
use tacgap_nn::{Conv2d, ConvTranspose2d, Dropout, InstanceNorm2d, Module, Param};

use super::INIT_STD;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Square input side; a power of two.
    pub size: usize,
    pub channels: usize,
    pub base_filters: usize,
    pub max_filters: usize,
    pub dropout: f32,
    /// Number of leading decoder blocks with dropout.
    pub dropout_blocks: usize,
    pub leaky_slope: f32,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { size: 256, channels: 3, base_filters: 64, max_filters: 512, dropout: 0.5, dropout_blocks: 3, leaky_slope: 0.2 }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.size >= 8 && self.size.is_power_of_two(),
            Config,
            "generator input size must be a power of two >= 8, got {}",
            self.size
        );
        ensure!(self.channels >= 1 && self.base_filters >= 1, Config, "channel counts must be positive");
        ensure!(self.max_filters >= self.base_filters, Config, "max filters below base filters");
        ensure!((0.0..1.0).contains(&self.dropout), Config, "dropout rate must lie in [0, 1)");
        ensure!(self.leaky_slope >= 0.0, Config, "leaky slope must be non-negative");
        Ok(())
    }

    /// Number of halvings from the input to a 1×1 bottleneck.
    pub fn depth(&self) -> usize {
        self.size.trailing_zeros() as usize
    }

    /// Output channels of encoder block `i`.
    pub fn encoder_filters(&self, i: usize) -> usize {
        self.base_filters.saturating_mul(1usize.checked_shl(i as u32).unwrap_or(usize::MAX)).min(self.max_filters)
    }

    /// Input channels of decoder block `j` (after concatenation for `j > 0`).
    pub fn decoder_in(&self, j: usize) -> usize {
        let d = self.depth();
        if j == 0 {
            self.encoder_filters(d - 1)
        } else {
            2 * self.encoder_filters(d - 1 - j)
        }
    }

    /// Output channels of decoder block `j`, before concatenation.
    pub fn decoder_out(&self, j: usize) -> usize {
        self.encoder_filters(self.depth() - 2 - j)
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    conv: Conv2d,
    norm: Option<InstanceNorm2d>,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    conv: ConvTranspose2d,
    norm: InstanceNorm2d,
    dropout: Option<Dropout>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    head: ConvTranspose2d,
}

struct EncoderCache {
    conv: Conv2dCache,
    norm: Option<InstanceNormCache>,
    out: Array4<f32>,
}

struct DecoderCache {
    conv: ConvTranspose2dCache,
    norm: InstanceNormCache,
    dropout: Option<Array4<f32>>,
    out: Array4<f32>,
}

/// Intermediate values of one forward pass.
pub struct GeneratorCache {
    encoder: Vec<EncoderCache>,
    decoder: Vec<DecoderCache>,
    head: ConvTranspose2dCache,
    output: Array4<f32>,
}

impl GeneratorCache {
    pub fn output(&self) -> &Array4<f32> {
        &self.output
    }

    /// Bottleneck activation `[n, c, 1, 1]`.
    pub fn bottleneck(&self) -> &Array4<f32> {
        &self.encoder.last().expect("non-empty encoder").out
    }
}

impl Generator {
    /// Builds and initialises a generator: kernels ~ N(0, 0.02), norms at
    /// scale 1, offset 0.
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let depth = spec.depth();
        let mut encoder = Vec::with_capacity(depth);
        let mut in_ch = spec.channels;
        for i in 0..depth {
            let out_ch = spec.encoder_filters(i);
            let normalised = i > 0 && i < depth - 1;
            encoder.push(EncoderBlock {
                conv: Conv2d::new(in_ch, out_ch, 4, 2, 1, !normalised),
                norm: normalised.then(|| InstanceNorm2d::new(out_ch)),
            });
            in_ch = out_ch;
        }
        let decoder = (0..depth - 1)
            .map(|j| DecoderBlock {
                conv: ConvTranspose2d::new(spec.decoder_in(j), spec.decoder_out(j), 4, 2, 1, false),
                norm: InstanceNorm2d::new(spec.decoder_out(j)),
                dropout: (j < spec.dropout_blocks && spec.dropout > 0.0).then(|| Dropout::new(spec.dropout)),
            })
            .collect();
        let head_in = 2 * spec.encoder_filters(0);
        let mut g = Self { head: ConvTranspose2d::new(head_in, spec.channels, 4, 2, 1, true), spec, encoder, decoder };
        g.init_weights(rng);
        Ok(g)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn init_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for b in &mut self.encoder {
            b.conv.init_normal(INIT_STD, rng);
            if let Some(n) = &mut b.norm {
                n.reset();
            }
        }
        for b in &mut self.decoder {
            b.conv.init_normal(INIT_STD, rng);
            b.norm.reset();
        }
        self.head.init_normal(INIT_STD, rng);
    }

    /// Forward pass. With `dropout_rng` the network is in training mode and
    /// dropout is active; with `None` it is deterministic.
    pub fn forward(&self, x: &Array4<f32>, mut dropout_rng: Option<&mut dyn RngCore>) -> GeneratorCache {
        let (_, c, h, w) = x.dim();
        assert_eq!((c, h, w), (self.spec.channels, self.spec.size, self.spec.size), "generator input dims");
        let slope = self.spec.leaky_slope;
        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        for b in &self.encoder {
            let (y, conv) = b.conv.forward(&cur);
            let (y, norm) = match &b.norm {
                Some(n) => {
                    let (y, c) = n.forward(&y);
                    (y, Some(c))
                }
                None => (y, None),
            };
            let out = leaky_relu(&y, slope);
            cur = out.clone();
            encoder.push(EncoderCache { conv, norm, out });
        }
        let depth = self.encoder.len();
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for (j, b) in self.decoder.iter().enumerate() {
            let (y, conv) = b.conv.forward(&cur);
            let (y, norm) = b.norm.forward(&y);
            let (y, dropout) = match (&b.dropout, dropout_rng.as_deref_mut()) {
                (Some(d), Some(rng)) => {
                    let (y, m) = d.forward(&y, rng);
                    (y, Some(m))
                }
                _ => (y, None),
            };
            let out = relu(&y);
            let skip = &encoder[depth - 2 - j].out;
            cur = concatenate(Axis(1), &[out.view(), skip.view()]).expect("matching spatial dims");
            decoder.push(DecoderCache { conv, norm, dropout, out });
        }
        let (y, head) = self.head.forward(&cur);
        let output = tanh(&y);
        GeneratorCache { encoder, decoder, head, output }
    }

    /// Deterministic inference.
    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        self.forward(x, None).output
    }

    /// Back-propagates `dy` (gradient w.r.t. the output) and returns the
    /// input gradient. Parameter gradients accumulate when `param_grads`.
    pub fn backward(&mut self, cache: &GeneratorCache, dy: &Array4<f32>, param_grads: bool) -> Array4<f32> {
        let slope = self.spec.leaky_slope;
        let depth = self.encoder.len();
        let d = tanh_backward(&cache.output, dy);
        let mut grad = self.head.backward(&cache.head, &d, param_grads);
        let mut skip_grads: Vec<Option<Array4<f32>>> = vec![None; depth];
        for j in (0..self.decoder.len()).rev() {
            let b = &mut self.decoder[j];
            let c = &cache.decoder[j];
            let split = c.out.dim().1;
            let d_out = grad.slice(s![.., ..split, .., ..]).to_owned();
            skip_grads[depth - 2 - j] = Some(grad.slice(s![.., split.., .., ..]).to_owned());
            let mut d = relu_backward(&c.out, &d_out);
            if let Some(m) = &c.dropout {
                d = Dropout::backward(m, &d);
            }
            let d = b.norm.backward(&c.norm, &d, param_grads);
            grad = b.conv.backward(&c.conv, &d, param_grads);
        }
        for i in (0..depth).rev() {
            if let Some(sg) = skip_grads[i].take() {
                grad += &sg;
            }
            let b = &mut self.encoder[i];
            let c = &cache.encoder[i];
            let mut d = leaky_relu_backward(&c.out, &grad, slope);
            if let (Some(n), Some(nc)) = (&mut b.norm, &c.norm) {
                d = n.backward(nc, &d, param_grads);
            }
            grad = b.conv.backward(&c.conv, &d, param_grads);
        }
        grad
    }

    /// Channel counts `(in, out)` of each decoder block, for inspection.
    pub fn decoder_channels(&self) -> Vec<(usize, usize)> {
        self.decoder.iter().map(|b| (b.conv.in_channels, b.conv.out_channels)).collect()
    }

    pub fn encoder_channels(&self) -> Vec<(usize, usize)> {
        self.encoder.iter().map(|b| (b.conv.in_channels, b.conv.out_channels)).collect()
    }

    /// Every instance-norm scale parameter.
    pub fn norm_scales(&self) -> Vec<&Param> {
        let enc = self.encoder.iter().filter_map(|b| b.norm.as_ref().map(|n| &n.gamma));
        enc.chain(self.decoder.iter().map(|b| &b.norm.gamma)).collect()
    }
}

impl Module for Generator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.encoder.iter().enumerate() {
            let p = join(prefix, &format!("enc.{i}"));
            b.conv.visit_params(&join(&p, "conv"), f);
            if let Some(n) = &b.norm {
                n.visit_params(&join(&p, "norm"), f);
            }
        }
        for (j, b) in self.decoder.iter().enumerate() {
            let p = join(prefix, &format!("dec.{j}"));
            b.conv.visit_params(&join(&p, "conv"), f);
            b.norm.visit_params(&join(&p, "norm"), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            let p = join(prefix, &format!("enc.{i}"));
            b.conv.visit_params_mut(&join(&p, "conv"), f);
            if let Some(n) = &mut b.norm {
                n.visit_params_mut(&join(&p, "norm"), f);
            }
        }
        for (j, b) in self.decoder.iter_mut().enumerate() {
            let p = join(prefix, &format!("dec.{j}"));
            b.conv.visit_params_mut(&join(&p, "conv"), f);
            b.norm.visit_params_mut(&join(&p, "norm"), f);
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(size: usize) -> GeneratorSpec {
        GeneratorSpec { size, base_filters: 4, max_filters: 16, ..Default::default() }
    }

    fn random_input(size: usize, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((1, 3, size, size), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Generator::new(small(48), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(Generator::new(small(4), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn filters_follow_capped_doubling() {
        let spec = GeneratorSpec::default();
        let g = Generator::new(GeneratorSpec { size: 256, ..spec.clone() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let outs: Vec<usize> = g.encoder_channels().iter().map(|c| c.1).collect();
        assert_eq!(outs, vec![64, 128, 256, 512, 512, 512, 512, 512]);
        // Decoder inputs double the mirrored encoder output after concatenation.
        let dec = g.decoder_channels();
        assert_eq!(dec[0], (512, 512));
        for (j, (inp, out)) in dec.iter().enumerate().skip(1) {
            assert_eq!(*inp, 2 * outs[outs.len() - 1 - j]);
            assert_eq!(*out, outs[outs.len() - 2 - j]);
        }
        // Parameter count from the layer formula.
        let mut expected = 0;
        let mut cin = 3;
        for (i, &f) in outs.iter().enumerate() {
            expected += cin * f * 16;
            let normed = i > 0 && i < outs.len() - 1;
            expected += if normed { 2 * f } else { f };
            cin = f;
        }
        for (inp, out) in &dec {
            expected += inp * out * 16 + 2 * out;
        }
        expected += 2 * 64 * 3 * 16 + 3;
        assert_eq!(g.param_count(), expected);
    }

    #[test]
    fn bottleneck_is_one_by_one() {
        let spec = GeneratorSpec { size: 256, base_filters: 8, max_filters: 512, ..Default::default() };
        let g = Generator::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cache = g.forward(&random_input(256, 2), None);
        assert_eq!(cache.bottleneck().dim(), (1, 512, 1, 1));
        assert_eq!(cache.output().dim(), (1, 3, 256, 256));
    }

    #[test]
    fn output_shape_and_range() {
        let g = Generator::new(small(32), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y = g.infer(&Array4::zeros((2, 3, 32, 32)));
        assert_eq!(y.dim(), (2, 3, 32, 32));
        assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = g.infer(&y);
        assert_eq!(back.dim(), (2, 3, 32, 32));
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_not() {
        let g = Generator::new(small(16), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = random_input(16, 5);
        assert_eq!(g.infer(&x), g.infer(&x));
        let mut differing = 0;
        for k in 0..10u64 {
            let mut r1 = ChaCha8Rng::seed_from_u64(100 + 2 * k);
            let mut r2 = ChaCha8Rng::seed_from_u64(101 + 2 * k);
            let a = g.forward(&x, Some(&mut r1)).output;
            let b = g.forward(&x, Some(&mut r2)).output;
            differing += usize::from(a != b);
        }
        assert_eq!(differing, 10);
    }

    #[test]
    fn init_statistics() {
        let g = Generator::new(GeneratorSpec { size: 64, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut values = Vec::new();
        g.visit_params("", &mut |name, p| {
            if name.ends_with("weight") {
                values.extend(p.value.iter().map(|v| *v as f64));
            }
        });
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 * 0.02 / n.sqrt(), "mean {mean}");
        assert!((std - 0.02).abs() < 0.001, "std {std}");
        assert!(g.norm_scales().iter().all(|p| p.value.iter().all(|v| *v == 1.0)));
        let again = Generator::new(GeneratorSpec { size: 64, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(g.named_values(""), again.named_values(""));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = GeneratorSpec { size: 8, base_filters: 2, max_filters: 4, dropout: 0.0, ..Default::default() };
        let mut g = Generator::new(spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        // Larger weights so the check sees non-trivial curvature.
        g.visit_params_mut("", &mut |_, p| p.value.mapv_inplace(|v| v * 20.0));
        let x = random_input(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = Array4::from_shape_fn((1, 3, 8, 8), |_| rng.random_range(-1.0f32..1.0));
        let loss = |g: &Generator, x: &Array4<f32>| -> f64 {
            g.infer(x).iter().zip(r.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let cache = g.forward(&x, None);
        let mut ga = g.clone();
        ga.zero_grad();
        let dx = ga.backward(&cache, &r, true);
        let eps = 1e-2f32;
        for idx in [0usize, 37, 100, 191] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            xm.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (loss(&g, &xp) - loss(&g, &xm)) / (2.0 * eps as f64);
            let an = dx.as_slice().unwrap()[idx] as f64;
            assert!((fd - an).abs() < 2e-2 * (1.0 + fd.abs()), "input[{idx}] fd {fd} an {an}");
        }
        let mut grads = Vec::new();
        ga.visit_params("", &mut |n, p| grads.push((n.to_string(), p.grad.clone())));
        for (name, grad) in grads.iter().filter(|(n, _)| n.contains("weight") || n.contains("gamma")) {
            let idx = grad.len() / 2;
            let perturbed = |delta: f32| {
                let mut gp = g.clone();
                gp.visit_params_mut("", &mut |n, p| {
                    if n == name {
                        *p.value.iter_mut().nth(idx).unwrap() += delta;
                    }
                });
                loss(&gp, &x)
            };
            let fd = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps as f64);
            let an = *grad.iter().nth(idx).unwrap() as f64;
            assert!((fd - an).abs() < 2e-2 * (1.0 + fd.abs()), "{name} fd {fd} an {an}");
        }
    }
}
