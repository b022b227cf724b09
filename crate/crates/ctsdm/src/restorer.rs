//! Restoration operators and their joint training.
//!
//! Two learned operators work together: a sinogram-domain restorer that
//! estimates the full-view sinogram from a zero-filled undersampled one at a
//! known schedule step, and a single residual block that refines the
//! back-projected image. Both carry global input skips with zero-initialized
//! final layers, so an untrained model is the identity.
//!
//! The restorer is a three-level convolutional encoder–decoder (no
//! attention) conditioned on the step index through a sinusoidal embedding
//! injected as per-channel biases; an attention U-Net can replace it behind
//! the same operator interface. Internally the sinogram is divided by a
//! geometry-derived signal scale so activations stay order-one regardless of
//! path-length units.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    fbp_linear, fbp_linear_adjoint, forward_project, FanBeamGeometry, FilterKind, Image, Sinogram,
};
use crate::nn::{
    add_channel_bias, avgpool2, avgpool2_backward, channel_sums, silu, silu_backward,
    sinusoidal_embedding, upsample2, upsample2_backward, Conv3x3, Linear, Params, Tensor,
};
use crate::sampling::{
    degrade, GroupPartition, MaskTrajectory, SelectionStrategy, StepSchedule, ViewMask,
};

/// Anything that can estimate a full-view sinogram from an undersampled one.
///
/// Implementations must be pure with respect to their inputs so concurrent
/// reconstructions can share one operator read-only.
pub trait RestoreOperator: Sync {
    fn restore(&self, y_t: &Sinogram, mask: &ViewMask, t: usize) -> Result<Sinogram>;
}

impl<F> RestoreOperator for F
where
    F: Fn(&Sinogram, &ViewMask, usize) -> Sinogram + Sync,
{
    fn restore(&self, y_t: &Sinogram, mask: &ViewMask, t: usize) -> Result<Sinogram> {
        Ok(self(y_t, mask, t))
    }
}

// ---------------------------------------------------------------------------
// Restorer network
// ---------------------------------------------------------------------------

/// Architecture descriptor; everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorerArch {
    pub num_views: usize,
    pub num_detectors: usize,
    pub channels: [usize; 3],
    pub emb_dim: usize,
    /// Largest schedule step the model was built for.
    pub max_step: usize,
    /// Typical line-integral magnitude; inputs are divided by it and the
    /// residual is multiplied back.
    pub signal_scale: f64,
}

impl RestorerArch {
    pub fn for_geometry(
        geom: &FanBeamGeometry,
        sched: &StepSchedule,
        channels: [usize; 3],
        emb_dim: usize,
    ) -> Result<Self> {
        if geom.num_views % 4 != 0 || geom.num_detectors % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "restorer needs sinogram dims divisible by 4, got {}×{}",
                geom.num_views, geom.num_detectors
            )));
        }
        if channels.iter().any(|&c| c == 0) || emb_dim < 2 || emb_dim % 2 != 0 {
            return Err(Error::InvalidArgument("bad channel widths or embedding dim".into()));
        }
        Ok(Self {
            num_views: geom.num_views,
            num_detectors: geom.num_detectors,
            channels,
            emb_dim,
            max_step: sched.total_steps(),
            signal_scale: 0.5 * geom.image_size_px as f64 * geom.pixel_spacing_mm,
        })
    }
}

struct RestorerLayers {
    conv_a1: Conv3x3,
    conv_a2: Conv3x3,
    conv_b1: Conv3x3,
    conv_b2: Conv3x3,
    conv_m1: Conv3x3,
    conv_m2: Conv3x3,
    conv_u2p: Conv3x3,
    conv_u2: Conv3x3,
    conv_u1p: Conv3x3,
    conv_u1: Conv3x3,
    conv_head: Conv3x3,
    inj1: Linear,
    inj2: Linear,
    inj3: Linear,
}

impl RestorerLayers {
    /// Allocation order defines the flat parameter layout; changing it breaks
    /// checkpoint compatibility.
    fn build(params: &mut Params, arch: &RestorerArch) -> Self {
        let [c1, c2, c3] = arch.channels;
        let e = arch.emb_dim;
        Self {
            conv_a1: Conv3x3::new(params, 2, c1),
            conv_a2: Conv3x3::new(params, c1, c1),
            conv_b1: Conv3x3::new(params, c1, c2),
            conv_b2: Conv3x3::new(params, c2, c2),
            conv_m1: Conv3x3::new(params, c2, c3),
            conv_m2: Conv3x3::new(params, c3, c3),
            conv_u2p: Conv3x3::new(params, c3, c2),
            conv_u2: Conv3x3::new(params, c2, c2),
            conv_u1p: Conv3x3::new(params, c2, c1),
            conv_u1: Conv3x3::new(params, c1, c1),
            // The head also sees the raw input planes, so short-range
            // gap filling does not have to round-trip through the trunk.
            conv_head: Conv3x3::new(params, c1 + 2, 1),
            inj1: Linear::new(params, e, c1),
            inj2: Linear::new(params, e, c2),
            inj3: Linear::new(params, e, c3),
        }
    }
}

/// Sinogram-domain restoration operator.
pub struct RestorerModel {
    arch: RestorerArch,
    layers: RestorerLayers,
    pub(crate) params: Params,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct RestorerCache {
    input: Tensor,
    emb: Vec<f64>,
    a_pre: Tensor,
    a_act: Tensor,
    b_pre: Tensor,
    f1: Tensor,
    p1: Tensor,
    c_pre: Tensor,
    c_act: Tensor,
    d_pre: Tensor,
    f2: Tensor,
    p2: Tensor,
    e_pre: Tensor,
    e_act: Tensor,
    f_pre: Tensor,
    u2: Tensor,
    g_pre: Tensor,
    d2: Tensor,
    h_pre: Tensor,
    u1: Tensor,
    q_pre: Tensor,
    d1: Tensor,
    r_pre: Tensor,
    head_in: Tensor,
}

impl RestorerModel {
    /// Fresh model with seeded initialization. The trunk uses He-style
    /// weights; the head is zero so the model starts as the identity skip.
    pub fn new(arch: RestorerArch, rng: &mut impl Rng) -> Self {
        let mut params = Params::default();
        let layers = RestorerLayers::build(&mut params, &arch);
        for conv in [
            &layers.conv_a1,
            &layers.conv_a2,
            &layers.conv_b1,
            &layers.conv_b2,
            &layers.conv_m1,
            &layers.conv_m2,
            &layers.conv_u2p,
            &layers.conv_u2,
            &layers.conv_u1p,
            &layers.conv_u1,
        ] {
            conv.init_kaiming(&mut params, rng);
        }
        layers.conv_head.init_zero(&mut params);
        for inj in [&layers.inj1, &layers.inj2, &layers.inj3] {
            inj.init_uniform(&mut params, rng);
        }
        Self { arch, layers, params }
    }

    /// Rebuilds a model from its descriptor and a flat parameter vector.
    pub fn from_parameters(arch: RestorerArch, values: Vec<f64>) -> Result<Self> {
        let mut params = Params::default();
        let layers = RestorerLayers::build(&mut params, &arch);
        if values.len() != params.len() {
            return Err(Error::Format(format!(
                "restorer expects {} parameters, got {}",
                params.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("restorer parameters must be finite".into()));
        }
        params.values = values;
        Ok(Self { arch, layers, params })
    }

    pub fn arch(&self) -> &RestorerArch {
        &self.arch
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params.values
    }

    fn check_input(&self, y_t: &Sinogram, t: usize) -> Result<()> {
        if y_t.num_views() != self.arch.num_views
            || y_t.num_detectors() != self.arch.num_detectors
        {
            return Err(Error::DimensionMismatch(format!(
                "sinogram is {}×{}, model expects {}×{}",
                y_t.num_views(),
                y_t.num_detectors(),
                self.arch.num_views,
                self.arch.num_detectors
            )));
        }
        if t > self.arch.max_step {
            return Err(Error::StepOutOfRange { step: t, max: self.arch.max_step });
        }
        Ok(())
    }

    fn assemble_input(&self, y_t: &[f64], mask: &ViewMask) -> Tensor {
        let (h, w) = (self.arch.num_views, self.arch.num_detectors);
        let mut input = Tensor::zeros(2, h, w);
        let inv_scale = 1.0 / self.arch.signal_scale;
        for (dst, &src) in input.plane_mut(0).iter_mut().zip(y_t) {
            *dst = src * inv_scale;
        }
        let mask_plane = input.plane_mut(1);
        for row in mask.rows0() {
            mask_plane[row * w..(row + 1) * w].iter_mut().for_each(|v| *v = 1.0);
        }
        input
    }

    pub(crate) fn forward_cached(
        &self,
        y_t: &[f64],
        mask: &ViewMask,
        t: usize,
    ) -> (Vec<f64>, RestorerCache) {
        let p = &self.params;
        let l = &self.layers;
        let input = self.assemble_input(y_t, mask);
        let emb = sinusoidal_embedding(t as f64, self.arch.emb_dim);

        let mut a_pre = l.conv_a1.forward(p, &input);
        add_channel_bias(&mut a_pre, &l.inj1.forward(p, &emb));
        let a_act = silu(&a_pre);
        let b_pre = l.conv_a2.forward(p, &a_act);
        let f1 = silu(&b_pre);
        let p1 = avgpool2(&f1);

        let mut c_pre = l.conv_b1.forward(p, &p1);
        add_channel_bias(&mut c_pre, &l.inj2.forward(p, &emb));
        let c_act = silu(&c_pre);
        let d_pre = l.conv_b2.forward(p, &c_act);
        let f2 = silu(&d_pre);
        let p2 = avgpool2(&f2);

        let mut e_pre = l.conv_m1.forward(p, &p2);
        add_channel_bias(&mut e_pre, &l.inj3.forward(p, &emb));
        let e_act = silu(&e_pre);
        let f_pre = l.conv_m2.forward(p, &e_act);
        let f3 = silu(&f_pre);

        let u2 = upsample2(&f3);
        let mut g_pre = l.conv_u2p.forward(p, &u2);
        for (g, s) in g_pre.data.iter_mut().zip(&f2.data) {
            *g += s;
        }
        let d2 = silu(&g_pre);
        let h_pre = l.conv_u2.forward(p, &d2);
        let d2o = silu(&h_pre);

        let u1 = upsample2(&d2o);
        let mut q_pre = l.conv_u1p.forward(p, &u1);
        for (q, s) in q_pre.data.iter_mut().zip(&f1.data) {
            *q += s;
        }
        let d1 = silu(&q_pre);
        let r_pre = l.conv_u1.forward(p, &d1);
        let d1o = silu(&r_pre);

        let mut head_in = Tensor::zeros(d1o.ch + 2, d1o.h, d1o.w);
        head_in.data[..d1o.data.len()].copy_from_slice(&d1o.data);
        head_in.data[d1o.data.len()..].copy_from_slice(&input.data);
        let head = l.conv_head.forward(p, &head_in);
        let scale = self.arch.signal_scale;
        // Residual gated to unmeasured rows: measured data passes through
        // exactly and the trunk spends all capacity on filling gaps.
        let out: Vec<f64> = y_t
            .iter()
            .zip(&head.data)
            .zip(input.plane(1))
            .map(|((y, h), m)| y + scale * (1.0 - m) * h)
            .collect();

        let cache = RestorerCache {
            input,
            emb,
            a_pre,
            a_act,
            b_pre,
            f1,
            p1,
            c_pre,
            c_act,
            d_pre,
            f2,
            p2,
            e_pre,
            e_act,
            f_pre,
            u2,
            g_pre,
            d2,
            h_pre,
            u1,
            q_pre,
            d1,
            r_pre,
            head_in,
        };
        (out, cache)
    }

    /// Backward pass from an output-space gradient; accumulates parameter
    /// gradients in place.
    pub(crate) fn backward(&mut self, grad_out: &[f64], cache: &RestorerCache) {
        let l = &self.layers;
        let p = &mut self.params;
        let (h, w) = (self.arch.num_views, self.arch.num_detectors);
        let scale = self.arch.signal_scale;

        let mut g_head = Tensor::zeros(1, h, w);
        for ((g, &go), m) in g_head.data.iter_mut().zip(grad_out).zip(cache.input.plane(1)) {
            *g = scale * (1.0 - m) * go;
        }

        let g_head_in = l.conv_head.backward(p, &cache.head_in, &g_head);
        // Only the trunk-feature planes propagate further; the raw input
        // planes are data.
        let c1 = self.arch.channels[0];
        let mut g_d1o = Tensor::zeros(c1, h, w);
        g_d1o.data.copy_from_slice(&g_head_in.data[..c1 * h * w]);
        let g_r_pre = silu_backward(&g_d1o, &cache.r_pre);
        let g_d1 = l.conv_u1.backward(p, &cache.d1, &g_r_pre);
        let g_q_pre = silu_backward(&g_d1, &cache.q_pre);
        let g_u1 = l.conv_u1p.backward(p, &cache.u1, &g_q_pre);
        let g_d2o = upsample2_backward(&g_u1);
        let g_h_pre = silu_backward(&g_d2o, &cache.h_pre);
        let g_d2 = l.conv_u2.backward(p, &cache.d2, &g_h_pre);
        let g_g_pre = silu_backward(&g_d2, &cache.g_pre);
        let g_u2 = l.conv_u2p.backward(p, &cache.u2, &g_g_pre);
        let g_f3 = upsample2_backward(&g_u2);
        let g_f_pre = silu_backward(&g_f3, &cache.f_pre);
        let g_e_act = l.conv_m2.backward(p, &cache.e_act, &g_f_pre);
        let g_e_pre = silu_backward(&g_e_act, &cache.e_pre);
        l.inj3.backward(p, &cache.emb, &channel_sums(&g_e_pre));
        let g_p2 = l.conv_m1.backward(p, &cache.p2, &g_e_pre);

        // f2 feeds both the pooled encoder path and the decoder skip add.
        let mut g_f2 = avgpool2_backward(&g_p2, cache.f2.h, cache.f2.w);
        for (g, s) in g_f2.data.iter_mut().zip(&g_g_pre.data) {
            *g += s;
        }
        let g_d_pre = silu_backward(&g_f2, &cache.d_pre);
        let g_c_act = l.conv_b2.backward(p, &cache.c_act, &g_d_pre);
        let g_c_pre = silu_backward(&g_c_act, &cache.c_pre);
        l.inj2.backward(p, &cache.emb, &channel_sums(&g_c_pre));
        let g_p1 = l.conv_b1.backward(p, &cache.p1, &g_c_pre);

        let mut g_f1 = avgpool2_backward(&g_p1, cache.f1.h, cache.f1.w);
        for (g, s) in g_f1.data.iter_mut().zip(&g_q_pre.data) {
            *g += s;
        }
        let g_b_pre = silu_backward(&g_f1, &cache.b_pre);
        let g_a_act = l.conv_a2.backward(p, &cache.a_act, &g_b_pre);
        let g_a_pre = silu_backward(&g_a_act, &cache.a_pre);
        l.inj1.backward(p, &cache.emb, &channel_sums(&g_a_pre));
        // The input gradient is discarded; measurements are data.
        let _ = l.conv_a1.backward(p, &cache.input, &g_a_pre);
    }
}

impl RestoreOperator for RestorerModel {
    fn restore(&self, y_t: &Sinogram, mask: &ViewMask, t: usize) -> Result<Sinogram> {
        self.check_input(y_t, t)?;
        let (out, _) = self.forward_cached(y_t.data(), mask, t);
        Sinogram::from_values(y_t.num_views(), y_t.num_detectors(), out)
    }
}

// ---------------------------------------------------------------------------
// Oracle and analytic baselines
// ---------------------------------------------------------------------------

/// Test fixture realizing a perfect restoration operator: ignores its input
/// and returns the stored ground-truth sinogram. Used to prove reverse-loop
/// exactness independently of any learned model.
pub struct OracleRestorer {
    truth: Sinogram,
}

impl OracleRestorer {
    pub fn new(truth: Sinogram) -> Self {
        Self { truth }
    }

    pub fn truth(&self) -> &Sinogram {
        &self.truth
    }
}

impl RestoreOperator for OracleRestorer {
    fn restore(&self, _y_t: &Sinogram, _mask: &ViewMask, _t: usize) -> Result<Sinogram> {
        let mut out = self.truth.clone();
        out.set_mask(None);
        Ok(out)
    }
}

/// Fills missing view rows by per-detector linear interpolation in view
/// angle, wrapping circularly across the full turn. Measured rows pass
/// through untouched. An analytic no-training baseline.
pub fn interp_restore(y_t: &Sinogram, mask: &ViewMask) -> Result<Sinogram> {
    if mask.len() < 2 {
        return Err(Error::InvalidArgument(
            "view interpolation needs at least two measured views".into(),
        ));
    }
    if mask.full_views() != y_t.num_views() {
        return Err(Error::DimensionMismatch(format!(
            "mask covers {} views, sinogram has {}",
            mask.full_views(),
            y_t.num_views()
        )));
    }
    let v = y_t.num_views();
    let d = y_t.num_detectors();
    let measured: Vec<usize> = mask.rows0().collect();
    let mut out = y_t.clone();
    out.set_mask(None);

    for gap in 0..measured.len() {
        let lo = measured[gap];
        let hi_raw = if gap + 1 < measured.len() { measured[gap + 1] } else { measured[0] + v };
        let span = hi_raw - lo;
        for offset in 1..span {
            let row = (lo + offset) % v;
            let w_hi = offset as f64 / span as f64;
            let w_lo = 1.0 - w_hi;
            let hi = hi_raw % v;
            for bin in 0..d {
                out.row_mut(row)[bin] = w_lo * y_t.row(lo)[bin] + w_hi * y_t.row(hi)[bin];
            }
        }
    }
    Ok(out)
}

/// [`RestoreOperator`] wrapper around [`interp_restore`].
pub struct InterpRestorer;

impl RestoreOperator for InterpRestorer {
    fn restore(&self, y_t: &Sinogram, mask: &ViewMask, _t: usize) -> Result<Sinogram> {
        interp_restore(y_t, mask)
    }
}

// ---------------------------------------------------------------------------
// Refiner network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerArch {
    pub size_px: usize,
    pub channels: usize,
}

/// One residual block (two 3×3 convolutions with a skip) over reconstructed
/// images.
pub struct RefinerModel {
    arch: RefinerArch,
    conv_in: Conv3x3,
    conv_out: Conv3x3,
    pub(crate) params: Params,
}

pub(crate) struct RefinerCache {
    input: Tensor,
    s_pre: Tensor,
    s_act: Tensor,
}

impl RefinerModel {
    pub fn new(arch: RefinerArch, rng: &mut impl Rng) -> Self {
        let mut params = Params::default();
        let conv_in = Conv3x3::new(&mut params, 1, arch.channels);
        let conv_out = Conv3x3::new(&mut params, arch.channels, 1);
        conv_in.init_kaiming(&mut params, rng);
        conv_out.init_zero(&mut params);
        Self { arch, conv_in, conv_out, params }
    }

    pub fn from_parameters(arch: RefinerArch, values: Vec<f64>) -> Result<Self> {
        let mut params = Params::default();
        let conv_in = Conv3x3::new(&mut params, 1, arch.channels);
        let conv_out = Conv3x3::new(&mut params, arch.channels, 1);
        if values.len() != params.len() {
            return Err(Error::Format(format!(
                "refiner expects {} parameters, got {}",
                params.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("refiner parameters must be finite".into()));
        }
        params.values = values;
        Ok(Self { arch, conv_in, conv_out, params })
    }

    pub fn arch(&self) -> &RefinerArch {
        &self.arch
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params.values
    }

    /// Linear-path forward (no clamping); the training loss differentiates
    /// through this.
    pub(crate) fn forward_cached(&self, img: &[f64]) -> (Vec<f64>, RefinerCache) {
        let n = self.arch.size_px;
        let mut input = Tensor::zeros(1, n, n);
        input.data.copy_from_slice(img);
        let s_pre = self.conv_in.forward(&self.params, &input);
        let s_act = silu(&s_pre);
        let res = self.conv_out.forward(&self.params, &s_act);
        let out: Vec<f64> = img.iter().zip(&res.data).map(|(x, r)| x + r).collect();
        (out, RefinerCache { input, s_pre, s_act })
    }

    /// Backward pass; returns the gradient with respect to the input image.
    pub(crate) fn backward(&mut self, grad_out: &[f64], cache: &RefinerCache) -> Vec<f64> {
        let n = self.arch.size_px;
        let mut g_res = Tensor::zeros(1, n, n);
        g_res.data.copy_from_slice(grad_out);
        let g_s_act = self.conv_out.backward(&mut self.params, &cache.s_act, &g_res);
        let g_s_pre = silu_backward(&g_s_act, &cache.s_pre);
        let g_branch = self.conv_in.backward(&mut self.params, &cache.input, &g_s_pre);
        grad_out.iter().zip(&g_branch.data).map(|(g, b)| g + b).collect()
    }
}

/// Applies the refiner and clamps into the image range.
pub fn refine(model: &RefinerModel, img: &Image) -> Result<Image> {
    if img.size() != model.arch.size_px {
        return Err(Error::DimensionMismatch(format!(
            "image is {0}×{0}, refiner expects {1}×{1}",
            img.size(),
            model.arch.size_px
        )));
    }
    let (out, _) = model.forward_cached(img.data());
    Image::from_values(model.arch.size_px, out)
}

// ---------------------------------------------------------------------------
// Joint loss
// ---------------------------------------------------------------------------

/// Norm used by both loss terms, mean-reduced over all entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossNorm {
    #[default]
    L2,
    L1,
}

impl LossNorm {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "l2" | "mse" => Ok(Self::L2),
            "l1" => Ok(Self::L1),
            other => Err(Error::InvalidArgument(format!("unknown loss norm '{other}'"))),
        }
    }

    fn value(&self, diff: &[f64]) -> f64 {
        let n = diff.len() as f64;
        match self {
            Self::L2 => diff.iter().map(|d| d * d).sum::<f64>() / n,
            Self::L1 => diff.iter().map(|d| d.abs()).sum::<f64>() / n,
        }
    }

    fn grad(&self, diff: &[f64]) -> Vec<f64> {
        let n = diff.len() as f64;
        match self {
            Self::L2 => diff.iter().map(|d| 2.0 * d / n).collect(),
            Self::L1 => diff.iter().map(|d| d.signum() / n).collect(),
        }
    }
}

/// Joint loss components: the sinogram restoration term, the image
/// refinement term, and `total = sinogram + λ·image`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub sinogram_term: f64,
    pub image_term: f64,
    pub total: f64,
}

struct LossSetup<'a> {
    geom: &'a FanBeamGeometry,
    lambda: f64,
    norm: LossNorm,
    filter: FilterKind,
}

/// Computes the joint loss for one image at one degradation mask, optionally
/// accumulating parameter gradients.
fn loss_core(
    restorer: &mut RestorerModel,
    refiner: &mut RefinerModel,
    x: &Image,
    y_full: &Sinogram,
    mask: &ViewMask,
    t: usize,
    setup: &LossSetup,
    with_grads: bool,
) -> Result<LossValues> {
    restorer.check_input(y_full, t)?;
    let y_t = y_full.masked(mask);
    let (y0_hat, r_cache) = restorer.forward_cached(y_t.data(), mask, t);

    let diff_s: Vec<f64> = y0_hat.iter().zip(y_full.data()).map(|(a, b)| a - b).collect();
    let sinogram_term = setup.norm.value(&diff_s);

    let y0_sino =
        Sinogram::from_values(y_full.num_views(), y_full.num_detectors(), y0_hat)?;
    let img_lin = fbp_linear(&y0_sino, setup.geom, setup.filter)?;
    let (refined, f_cache) = refiner.forward_cached(&img_lin);
    let diff_i: Vec<f64> = refined.iter().zip(x.data()).map(|(a, b)| a - b).collect();
    let image_term = setup.norm.value(&diff_i);

    let total = sinogram_term + setup.lambda * image_term;
    if !total.is_finite() {
        return Err(Error::InvalidArgument("loss is not finite".into()));
    }

    if with_grads {
        let mut g_refined = setup.norm.grad(&diff_i);
        g_refined.iter_mut().for_each(|g| *g *= setup.lambda);
        let g_img = refiner.backward(&g_refined, &f_cache);
        let g_from_image = fbp_linear_adjoint(&g_img, setup.geom, setup.filter)?;
        let mut g_y0 = setup.norm.grad(&diff_s);
        for (g, gi) in g_y0.iter_mut().zip(&g_from_image) {
            *g += gi;
        }
        restorer.backward(&g_y0, &r_cache);
    }
    Ok(LossValues { sinogram_term, image_term, total })
}

/// Joint training loss for image `x` degraded to step `t` of `traj`: the
/// restorer's distance to the full sinogram plus `λ` times the refined
/// reconstruction's distance to the image. The image path goes through the
/// linear (unclamped) FBP so the whole loss stays differentiable.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss(
    restorer: &mut RestorerModel,
    refiner: &mut RefinerModel,
    x: &Image,
    geom: &FanBeamGeometry,
    traj: &MaskTrajectory,
    t: usize,
    lambda: f64,
    norm: LossNorm,
) -> Result<LossValues> {
    let y_full = forward_project(x, geom, None)?;
    let y_masked = degrade(&y_full, traj, t)?;
    let mask = y_masked.mask().expect("degrade attaches a mask").clone();
    let setup = LossSetup { geom, lambda, norm, filter: FilterKind::RamLak };
    loss_core(restorer, refiner, x, &y_full, &mask, t, &setup, false)
}

/// Same as [`compute_loss`] but also accumulates parameter gradients into
/// both models.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss_and_grads(
    restorer: &mut RestorerModel,
    refiner: &mut RefinerModel,
    x: &Image,
    geom: &FanBeamGeometry,
    traj: &MaskTrajectory,
    t: usize,
    lambda: f64,
    norm: LossNorm,
) -> Result<LossValues> {
    let y_full = forward_project(x, geom, None)?;
    let y_masked = degrade(&y_full, traj, t)?;
    let mask = y_masked.mask().expect("degrade attaches a mask").clone();
    let setup = LossSetup { geom, lambda, norm, filter: FilterKind::RamLak };
    loss_core(restorer, refiner, x, &y_full, &mask, t, &setup, true)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Parameter update rule. Plain SGD is available, but Adam copes far better
/// with the mixed gradient scales of the joint loss and is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl OptimizerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight λ of the image-domain term.
    pub lambda_weight: f64,
    pub learning_rate: f64,
    /// Ratio of final to initial learning rate, applied as a smooth
    /// exponential decay over the epochs. 1.0 keeps the rate fixed.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_norm: LossNorm,
    pub optimizer: OptimizerKind,
    pub sampling: SelectionStrategy,
    pub restorer_channels: [usize; 3],
    pub refiner_channels: usize,
    pub emb_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_weight: 1.0,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            epochs: 30,
            batch_size: 1,
            seed: 0,
            loss_norm: LossNorm::L2,
            optimizer: OptimizerKind::Adam,
            sampling: SelectionStrategy::GroupedRandom,
            restorer_channels: [8, 16, 32],
            refiner_channels: 8,
            emb_dim: 16,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda_weight < 0.0 {
            return Err(Error::InvalidArgument("lambda must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument("lr decay ratio must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub sinogram_loss: f64,
    pub image_loss: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub seed: u64,
    pub wall_secs: f64,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam => {
                Self::Adam(AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 })
            }
        }
    }

    /// One update over the concatenation of both parameter vectors, so Adam
    /// moments stay aligned with their parameters.
    fn step(&mut self, restorer: &mut Params, refiner: &mut Params, split: usize, lr: f64) {
        match self {
            Self::Sgd => {
                for params in [restorer, refiner] {
                    for (p, g) in params.values.iter_mut().zip(&params.grads) {
                        *p -= lr * g;
                    }
                }
            }
            Self::Adam(state) => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                state.step += 1;
                let bc1 = 1.0 - B1.powi(state.step as i32);
                let bc2 = 1.0 - B2.powi(state.step as i32);
                for (params, offset) in [(restorer, 0usize), (refiner, split)] {
                    for i in 0..params.values.len() {
                        let g = params.grads[i];
                        let j = offset + i;
                        state.m[j] = B1 * state.m[j] + (1.0 - B1) * g;
                        state.v[j] = B2 * state.v[j] + (1.0 - B2) * g * g;
                        params.values[i] -=
                            lr * (state.m[j] / bc1) / ((state.v[j] / bc2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// Jointly trains restorer and refiner.
///
/// Per sample: a step `t` is drawn uniformly from `{1..T}`, a fresh view mask
/// for `k_t` is drawn by the configured strategy (grouped-random by default,
/// which doubles as data augmentation), the joint loss is evaluated and one
/// optimizer step applied per batch. Fully reproducible for a fixed seed.
pub fn train(
    dataset: &[Image],
    geom: &FanBeamGeometry,
    sched: &StepSchedule,
    part: &GroupPartition,
    cfg: &TrainConfig,
) -> Result<(RestorerModel, RefinerModel, TrainHistory)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    for img in dataset {
        if img.size() != geom.image_size_px {
            return Err(Error::DimensionMismatch(format!(
                "dataset image is {0}×{0}, geometry expects {1}×{1}",
                img.size(),
                geom.image_size_px
            )));
        }
    }
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let arch = RestorerArch::for_geometry(geom, sched, cfg.restorer_channels, cfg.emb_dim)?;
    let mut restorer = RestorerModel::new(arch, &mut rng);
    let mut refiner = RefinerModel::new(
        RefinerArch { size_px: geom.image_size_px, channels: cfg.refiner_channels },
        &mut rng,
    );

    let projections: Vec<Sinogram> = dataset
        .iter()
        .map(|img| forward_project(img, geom, None))
        .collect::<Result<_>>()?;

    let setup = LossSetup {
        geom,
        lambda: cfg.lambda_weight,
        norm: cfg.loss_norm,
        filter: FilterKind::RamLak,
    };
    let restorer_len = restorer.params.len();
    let mut optimizer = Optimizer::new(cfg.optimizer, restorer_len + refiner.params.len());

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = if cfg.epochs > 1 {
            cfg.learning_rate * cfg.lr_decay.powf(epoch as f64 / (cfg.epochs - 1) as f64)
        } else {
            cfg.learning_rate
        };
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = EpochStats { sinogram_loss: 0.0, image_loss: 0.0, total_loss: 0.0 };
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            restorer.params.zero_grads();
            refiner.params.zero_grads();
            for (within, &idx) in chunk.iter().enumerate() {
                let t = rng.gen_range(1..=sched.total_steps());
                let mask = cfg.sampling.draw(sched.count_at(t), part, &mut rng)?;
                let loss = loss_core(
                    &mut restorer,
                    &mut refiner,
                    &dataset[idx],
                    &projections[idx],
                    &mask,
                    t,
                    &setup,
                    true,
                )
                .map_err(|e| match e {
                    Error::InvalidArgument(msg) if msg.contains("finite") => Error::NonFiniteLoss {
                        epoch,
                        sample: batch_idx * cfg.batch_size + within,
                    },
                    other => other,
                })?;
                sums.sinogram_loss += loss.sinogram_term;
                sums.image_loss += loss.image_term;
                sums.total_loss += loss.total;
            }
            let inv = 1.0 / chunk.len() as f64;
            restorer.params.grads.iter_mut().for_each(|g| *g *= inv);
            refiner.params.grads.iter_mut().for_each(|g| *g *= inv);
            optimizer.step(&mut restorer.params, &mut refiner.params, restorer_len, lr);
        }
        let inv = 1.0 / dataset.len() as f64;
        history.push(EpochStats {
            sinogram_loss: sums.sinogram_loss * inv,
            image_loss: sums.image_loss * inv,
            total_loss: sums.total_loss * inv,
        });
    }

    let history =
        TrainHistory { epochs: history, seed: cfg.seed, wall_secs: start.elapsed().as_secs_f64() };
    Ok((restorer, refiner, history))
}
