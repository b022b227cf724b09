//! Minimal CNN building blocks with hand-written forward and backward passes.
//!
//! Everything is `f64` and strictly deterministic: parameters live in one
//! flat vector, layers hold ranges into it, and every backward pass
//! accumulates into a parallel gradient vector in a fixed order. This keeps
//! finite-difference gradient checking, serialization, and optimizer steps
//! trivial. Activations are SiLU, which is smooth everywhere — kinks would
//! poison central-difference gradient checks.

use std::ops::Range;

use rand::Rng;

/// Channel-major (CHW) activation buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub ch: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Self { ch, h, w, data: vec![0.0; ch * h * w] }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        &mut self.data[c * hw..(c + 1) * hw]
    }
}

/// Flat parameter and gradient storage shared by all layers of a model.
#[derive(Debug, Clone, Default)]
pub struct Params {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl Params {
    fn alloc(&mut self, len: usize) -> Range<usize> {
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        self.grads.resize(start + len, 0.0);
        start..start + len
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// 3×3 convolution, stride 1, zero padding 1. Weight layout is
/// `[out_ch][in_ch][ky][kx]` inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    w: Range<usize>,
    b: Range<usize>,
}

impl Conv3x3 {
    pub fn new(params: &mut Params, in_ch: usize, out_ch: usize) -> Self {
        let w = params.alloc(out_ch * in_ch * 9);
        let b = params.alloc(out_ch);
        Self { in_ch, out_ch, w, b }
    }

    /// He-style uniform initialization for the 3×3 fan-in.
    pub fn init_kaiming(&self, params: &mut Params, rng: &mut impl Rng) {
        let bound = (6.0 / (9.0 * self.in_ch as f64)).sqrt();
        for v in &mut params.values[self.w.clone()] {
            *v = rng.gen_range(-bound..bound);
        }
        for v in &mut params.values[self.b.clone()] {
            *v = 0.0;
        }
    }

    /// Zero initialization; used for final layers so residual branches start
    /// as the identity.
    pub fn init_zero(&self, params: &mut Params) {
        params.values[self.w.clone()].iter_mut().for_each(|v| *v = 0.0);
        params.values[self.b.clone()].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn forward(&self, params: &Params, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.ch, self.in_ch);
        let (h, w) = (x.h, x.w);
        let mut out = Tensor::zeros(self.out_ch, h, w);
        let weights = &params.values[self.w.clone()];
        let biases = &params.values[self.b.clone()];
        for oc in 0..self.out_ch {
            out.plane_mut(oc).iter_mut().for_each(|v| *v = biases[oc]);
            for ic in 0..self.in_ch {
                let kbase = 9 * (oc * self.in_ch + ic);
                let xplane = x.plane(ic);
                let oplane = out.plane_mut(oc);
                for ky in 0..3usize {
                    let k0 = weights[kbase + 3 * ky];
                    let k1 = weights[kbase + 3 * ky + 1];
                    let k2 = weights[kbase + 3 * ky + 2];
                    for oy in 0..h {
                        let iy = oy as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let irow = &xplane[iy as usize * w..iy as usize * w + w];
                        let orow = &mut oplane[oy * w..oy * w + w];
                        accumulate_taps(orow, irow, k0, k1, k2);
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&self, params: &mut Params, x: &Tensor, gout: &Tensor) -> Tensor {
        debug_assert_eq!(gout.ch, self.out_ch);
        let (h, w) = (x.h, x.w);
        let mut gin = Tensor::zeros(self.in_ch, h, w);

        // Input gradient: correlate the output gradient with the kernel
        // flipped in both axes.
        let weights = &params.values[self.w.clone()];
        for ic in 0..self.in_ch {
            let gplane = gin.plane_mut(ic);
            for oc in 0..self.out_ch {
                let kbase = 9 * (oc * self.in_ch + ic);
                let gout_plane = gout.plane(oc);
                for ky in 0..3usize {
                    // Input row iy receives from output row oy = iy + 1 − ky,
                    // with the kernel column order reversed.
                    let k0 = weights[kbase + 3 * ky + 2];
                    let k1 = weights[kbase + 3 * ky + 1];
                    let k2 = weights[kbase + 3 * ky];
                    for iy in 0..h {
                        let oy = iy as isize + 1 - ky as isize;
                        if oy < 0 || oy >= h as isize {
                            continue;
                        }
                        let grow = &gout_plane[oy as usize * w..oy as usize * w + w];
                        let irow = &mut gplane[iy * w..iy * w + w];
                        accumulate_taps(irow, grow, k0, k1, k2);
                    }
                }
            }
        }

        // Weight gradients: shifted plane dot products.
        let (wr, br) = (self.w.clone(), self.b.clone());
        for oc in 0..self.out_ch {
            let gout_plane = gout.plane(oc);
            params.grads[br.start + oc] += gout_plane.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let kbase = wr.start + 9 * (oc * self.in_ch + ic);
                let xplane = x.plane(ic);
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let mut acc = 0.0;
                        for oy in 0..h {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let grow = &gout_plane[oy * w..oy * w + w];
                            let xrow = &xplane[iy as usize * w..iy as usize * w + w];
                            acc += shifted_dot(grow, xrow, kx as isize - 1);
                        }
                        params.grads[kbase + 3 * ky + kx] += acc;
                    }
                }
            }
        }
        gin
    }
}

/// `out[i] += k0·x[i−1] + k1·x[i] + k2·x[i+1]` with zero padding. Rows are
/// at least two wide everywhere in this crate.
#[inline]
fn accumulate_taps(out: &mut [f64], x: &[f64], k0: f64, k1: f64, k2: f64) {
    let w = out.len();
    out[0] += k1 * x[0] + k2 * x[1];
    let left = &x[..w - 2];
    let mid = &x[1..w - 1];
    let right = &x[2..];
    for (i, o) in out[1..w - 1].iter_mut().enumerate() {
        *o += k0 * left[i] + k1 * mid[i] + k2 * right[i];
    }
    out[w - 1] += k0 * x[w - 2] + k1 * x[w - 1];
}

/// `Σ_i a[i]·b[i+shift]` over valid indices, `shift ∈ {−1, 0, 1}`.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], shift: isize) -> f64 {
    let w = a.len();
    match shift {
        -1 => a[1..].iter().zip(&b[..w - 1]).map(|(x, y)| x * y).sum(),
        0 => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        1 => a[..w - 1].iter().zip(&b[1..]).map(|(x, y)| x * y).sum(),
        _ => unreachable!("3×3 kernel shifts are −1, 0, 1"),
    }
}

/// 2×2 average pooling. Requires even spatial dims.
pub fn avgpool2(x: &Tensor) -> Tensor {
    debug_assert!(x.h % 2 == 0 && x.w % 2 == 0);
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.ch, h2, w2);
    for c in 0..x.ch {
        let xp = x.plane(c);
        let op = out.plane_mut(c);
        for y in 0..h2 {
            for xcol in 0..w2 {
                let base = 2 * y * x.w + 2 * xcol;
                op[y * w2 + xcol] =
                    0.25 * (xp[base] + xp[base + 1] + xp[base + x.w] + xp[base + x.w + 1]);
            }
        }
    }
    out
}

pub fn avgpool2_backward(gout: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let mut gin = Tensor::zeros(gout.ch, in_h, in_w);
    for c in 0..gout.ch {
        let gp = gout.plane(c);
        let ip = gin.plane_mut(c);
        for y in 0..gout.h {
            for x in 0..gout.w {
                let g = 0.25 * gp[y * gout.w + x];
                let base = 2 * y * in_w + 2 * x;
                ip[base] += g;
                ip[base + 1] += g;
                ip[base + in_w] += g;
                ip[base + in_w + 1] += g;
            }
        }
    }
    gin
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut out = Tensor::zeros(x.ch, h2, w2);
    for c in 0..x.ch {
        let xp = x.plane(c);
        let op = out.plane_mut(c);
        for y in 0..h2 {
            let src = &xp[(y / 2) * x.w..(y / 2 + 1) * x.w];
            let dst = &mut op[y * w2..(y + 1) * w2];
            for (xcol, o) in dst.iter_mut().enumerate() {
                *o = src[xcol / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(gout: &Tensor) -> Tensor {
    let (h, w) = (gout.h / 2, gout.w / 2);
    let mut gin = Tensor::zeros(gout.ch, h, w);
    for c in 0..gout.ch {
        let gp = gout.plane(c);
        let ip = gin.plane_mut(c);
        for y in 0..gout.h {
            let src = &gp[y * gout.w..(y + 1) * gout.w];
            let dst = &mut ip[(y / 2) * w..(y / 2 + 1) * w];
            for (xcol, &g) in src.iter().enumerate() {
                dst[xcol / 2] += g;
            }
        }
    }
    gin
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation `x·σ(x)` applied out-of-place; the caller keeps the
/// pre-activation tensor for the backward pass.
pub fn silu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v *= sigmoid(*v));
    out
}

/// Gradient of SiLU given the pre-activation values.
pub fn silu_backward(gout: &Tensor, pre: &Tensor) -> Tensor {
    let mut gin = gout.clone();
    for (g, &x) in gin.data.iter_mut().zip(&pre.data) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
    gin
}

/// Sinusoidal step embedding: interleaved `sin`/`cos` at geometrically spaced
/// frequencies, the usual conditioning vector for diffusion step indices.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(i as f64) * (10_000.0f64).ln() / (half as f64 - 1.0).max(1.0)).exp();
        out[2 * i] = (t * freq).sin();
        out[2 * i + 1] = (t * freq).cos();
    }
    out
}

/// Bias-free linear map from an embedding vector to per-channel offsets.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    w: Range<usize>,
}

impl Linear {
    pub fn new(params: &mut Params, in_dim: usize, out_dim: usize) -> Self {
        let w = params.alloc(in_dim * out_dim);
        Self { in_dim, out_dim, w }
    }

    pub fn init_uniform(&self, params: &mut Params, rng: &mut impl Rng) {
        let bound = (1.0 / self.in_dim as f64).sqrt();
        for v in &mut params.values[self.w.clone()] {
            *v = rng.gen_range(-bound..bound);
        }
    }

    pub fn forward(&self, params: &Params, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_dim);
        let weights = &params.values[self.w.clone()];
        (0..self.out_dim)
            .map(|o| {
                weights[o * self.in_dim..(o + 1) * self.in_dim]
                    .iter()
                    .zip(input)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }

    /// Accumulates weight gradients; the embedding input is a constant, so no
    /// input gradient is needed.
    pub fn backward(&self, params: &mut Params, input: &[f64], gout: &[f64]) {
        let base = self.w.start;
        for (o, g) in gout.iter().enumerate() {
            let row = &mut params.grads[base + o * self.in_dim..base + (o + 1) * self.in_dim];
            for (gw, x) in row.iter_mut().zip(input) {
                *gw += g * x;
            }
        }
    }
}

/// Adds per-channel offsets in place (step-embedding injection).
pub fn add_channel_bias(x: &mut Tensor, bias: &[f64]) {
    debug_assert_eq!(bias.len(), x.ch);
    for (c, &b) in bias.iter().enumerate() {
        x.plane_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

/// Per-channel sums of a gradient tensor (backward of [`add_channel_bias`]
/// with respect to the bias vector).
pub fn channel_sums(g: &Tensor) -> Vec<f64> {
    (0..g.ch).map(|c| g.plane(c).iter().sum()).collect()
}
