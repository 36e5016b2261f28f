//! Strided 2-D convolution and transposed convolution via im2col + GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, Axis};
use rand::Rng;

use crate::init;
use crate::param::{join, Module, Param};
use crate::{conv_out_len, conv_transpose_out_len};

/// Patch geometry of a convolution: a `channels × height × width` image
/// scanned by a `kernel × kernel` window giving `out_h × out_w` positions.
#[derive(Debug, Clone, Copy)]
struct Patches {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `img` (`channels*height*width`, row-major) into a
/// `rows × cols` patch matrix.
fn im2col(img: &[f32], g: &Patches, out: &mut [f32]) {
    let cols = g.cols();
    debug_assert_eq!(out.len(), g.rows() * cols);
    let (h, w) = (g.height as isize, g.width as isize);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= h {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds a patch matrix back, summing overlaps into `img`.
fn col2im(cols_buf: &[f32], g: &Patches, img: &mut [f32]) {
    let cols = g.cols();
    let (h, w) = (g.height as isize, g.width as isize);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += *v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn sample_slice(x: &Array4<f32>, n: usize) -> &[f32] {
    let per = x.len() / x.shape()[0];
    &x.as_slice().expect("standard layout")[n * per..(n + 1) * per]
}

fn sample_slice_mut(x: &mut Array4<f32>, n: usize) -> &mut [f32] {
    let per = x.len() / x.shape()[0];
    &mut x.as_slice_mut().expect("standard layout")[n * per..(n + 1) * per]
}

fn add_channel_bias(y: &mut Array4<f32>, bias: &Param) {
    for mut sample in y.outer_iter_mut() {
        for (mut plane, b) in sample.outer_iter_mut().zip(bias.value.iter()) {
            plane += *b;
        }
    }
}

fn accumulate_channel_bias_grad(dy: &Array4<f32>, bias: &mut Param) {
    let sums = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    bias.grad.iter_mut().zip(sums.iter()).for_each(|(g, s)| *g += s);
}

/// Standard (cross-correlation) convolution, weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Patch matrices retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv2dCache {
    cols: Vec<Array2<f32>>,
    input_dims: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> Self {
        Self {
            weight: Param::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: bias.then(|| Param::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    /// Weights ~ Normal(0, std), bias zero.
    pub fn init_normal<R: Rng + ?Sized>(&mut self, std: f32, rng: &mut R) {
        init::fill_normal(&mut self.weight.value, std, rng);
        if let Some(b) = &mut self.bias {
            b.value.fill(0.0);
        }
    }

    pub fn out_dims(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        Some((
            conv_out_len(height, self.kernel, self.stride, self.pad)?,
            conv_out_len(width, self.kernel, self.stride, self.pad)?,
        ))
    }

    fn patches(&self, height: usize, width: usize) -> Patches {
        let (out_h, out_w) = self
            .out_dims(height, width)
            .unwrap_or_else(|| panic!("conv input {height}x{width} smaller than kernel {}", self.kernel));
        Patches {
            channels: self.in_channels,
            height,
            width,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h,
            out_w,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        let k = self.in_channels * self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, k))
            .expect("contiguous weight")
    }

    pub fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, Conv2dCache) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let per = c * h * w;
        let g = self.patches(h, w);
        let wm = self.weight_matrix();
        let mut y = Array4::<f32>::zeros((n, self.out_channels, g.out_h, g.out_w));
        let mut cache_cols = Vec::with_capacity(n);
        for i in 0..n {
            let mut cols = Array2::<f32>::zeros((g.rows(), g.cols()));
            im2col(&xs[i * per..(i + 1) * per], &g, cols.as_slice_mut().unwrap());
            let mut out = y
                .index_axis_mut(Axis(0), i)
                .into_shape_with_order((self.out_channels, g.cols()))
                .expect("contiguous output");
            general_mat_mul(1.0, &wm, &cols, 0.0, &mut out);
            cache_cols.push(cols);
        }
        if let Some(b) = &self.bias {
            add_channel_bias(&mut y, b);
        }
        (y, Conv2dCache { cols: cache_cols, input_dims: (n, c, h, w) })
    }

    /// Back-propagates `dy`; accumulates parameter gradients when
    /// `param_grads` is set and returns the input gradient.
    pub fn backward(&mut self, cache: &Conv2dCache, dy: &Array4<f32>, param_grads: bool) -> Array4<f32> {
        let (n, c, h, w) = cache.input_dims;
        let g = self.patches(h, w);
        let dy = dy.as_standard_layout();
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let mut dcols = Array2::<f32>::zeros((g.rows(), g.cols()));
        let k = g.rows();
        for i in 0..n {
            let dyi = dy
                .index_axis(Axis(0), i)
                .into_shape_with_order((self.out_channels, g.cols()))
                .expect("contiguous grad");
            if param_grads {
                let mut gw = self
                    .weight
                    .grad
                    .view_mut()
                    .into_shape_with_order((self.out_channels, k))
                    .expect("contiguous weight grad");
                general_mat_mul(1.0, &dyi, &cache.cols[i].t(), 1.0, &mut gw);
            }
            general_mat_mul(1.0, &self.weight_matrix().t(), &dyi, 0.0, &mut dcols);
            col2im(dcols.as_slice().unwrap(), &g, sample_slice_mut(&mut dx, i));
        }
        if param_grads {
            if let Some(b) = &mut self.bias {
                accumulate_channel_bias_grad(&dy.to_owned(), b);
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution (the adjoint of [`Conv2d`]), weight layout `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2dCache {
    input: Array4<f32>,
    out_hw: (usize, usize),
}

impl ConvTranspose2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> Self {
        Self {
            weight: Param::zeros(&[in_channels, out_channels, kernel, kernel]),
            bias: bias.then(|| Param::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn init_normal<R: Rng + ?Sized>(&mut self, std: f32, rng: &mut R) {
        init::fill_normal(&mut self.weight.value, std, rng);
        if let Some(b) = &mut self.bias {
            b.value.fill(0.0);
        }
    }

    pub fn out_dims(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        Some((
            conv_transpose_out_len(height, self.kernel, self.stride, self.pad)?,
            conv_transpose_out_len(width, self.kernel, self.stride, self.pad)?,
        ))
    }

    /// Patch geometry of the *output* image, whose scan positions coincide
    /// with the input pixels.
    fn patches(&self, height: usize, width: usize) -> Patches {
        let (oh, ow) = self
            .out_dims(height, width)
            .unwrap_or_else(|| panic!("transposed conv input {height}x{width} too small"));
        Patches {
            channels: self.out_channels,
            height: oh,
            width: ow,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h: height,
            out_w: width,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        let k = self.out_channels * self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.in_channels, k))
            .expect("contiguous weight")
    }

    pub fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, ConvTranspose2dCache) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "transposed conv input channels");
        let x = x.as_standard_layout().to_owned();
        let g = self.patches(h, w);
        let mut y = Array4::<f32>::zeros((n, self.out_channels, g.height, g.width));
        let mut cols = Array2::<f32>::zeros((g.rows(), g.cols()));
        for i in 0..n {
            let xi = x
                .index_axis(Axis(0), i)
                .into_shape_with_order((c, h * w))
                .expect("contiguous input");
            general_mat_mul(1.0, &self.weight_matrix().t(), &xi, 0.0, &mut cols);
            col2im(cols.as_slice().unwrap(), &g, sample_slice_mut(&mut y, i));
        }
        if let Some(b) = &self.bias {
            add_channel_bias(&mut y, b);
        }
        (y, ConvTranspose2dCache { input: x, out_hw: (g.height, g.width) })
    }

    pub fn backward(&mut self, cache: &ConvTranspose2dCache, dy: &Array4<f32>, param_grads: bool) -> Array4<f32> {
        let (n, c, h, w) = cache.input.dim();
        let g = self.patches(h, w);
        debug_assert_eq!((g.height, g.width), cache.out_hw);
        let dy = dy.as_standard_layout().to_owned();
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let mut dcols = Array2::<f32>::zeros((g.rows(), g.cols()));
        let k = g.rows();
        for i in 0..n {
            im2col(sample_slice(&dy, i), &g, dcols.as_slice_mut().unwrap());
            let mut dxi = dx
                .index_axis_mut(Axis(0), i)
                .into_shape_with_order((c, h * w))
                .expect("contiguous grad");
            general_mat_mul(1.0, &self.weight_matrix(), &dcols, 0.0, &mut dxi);
            if param_grads {
                let xi = cache
                    .input
                    .index_axis(Axis(0), i)
                    .into_shape_with_order((c, h * w))
                    .expect("contiguous input");
                let mut gw = self
                    .weight
                    .grad
                    .view_mut()
                    .into_shape_with_order((self.in_channels, k))
                    .expect("contiguous weight grad");
                general_mat_mul(1.0, &xi, &dcols.t(), 1.0, &mut gw);
            }
        }
        if param_grads {
            if let Some(b) = &mut self.bias {
                accumulate_channel_bias_grad(&dy, b);
            }
        }
        dx
    }
}

impl Module for ConvTranspose2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
