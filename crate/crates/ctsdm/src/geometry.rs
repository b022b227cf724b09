//! Fan-beam CT geometry: forward projection (the system operator `A`), its
//! exact adjoint (`Aᵀ`), and filtered back-projection (`A†`).
//!
//! The scanner model is a point source and a flat equispaced detector panel
//! rotating about the image center over a full circle. The forward projector
//! is ray-driven: each (view, detector) line integral is a midpoint sum of
//! bilinear image samples at a fixed step of half the pixel spacing. The
//! backprojector scatters with the same sample points and weights, which makes
//! the pair numerically adjoint and therefore testable against the
//! dot-product identity.

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::sampling::ViewMask;

/// Fan-beam scanner description.
///
/// Distances are in millimetres. View `i` (1-based) is acquired at gantry
/// angle `2π·(i−1)/num_views`; angles are strictly increasing and equispaced
/// over the full circle. The detector panel spacing is not a free parameter:
/// it is computed at construction so the panel subtends the whole image
/// diagonal from every view (no transaxial truncation).
#[derive(Debug, Clone, PartialEq)]
pub struct FanBeamGeometry {
    pub num_views: usize,
    pub num_detectors: usize,
    pub source_to_detector_mm: f64,
    pub source_to_center_mm: f64,
    pub image_size_px: usize,
    pub pixel_spacing_mm: f64,
    detector_spacing_mm: f64,
}

/// Margin applied to the image diagonal when sizing the detector panel.
const PANEL_COVERAGE_MARGIN: f64 = 1.04;

impl FanBeamGeometry {
    pub fn new(
        num_views: usize,
        num_detectors: usize,
        source_to_detector_mm: f64,
        source_to_center_mm: f64,
        image_size_px: usize,
        pixel_spacing_mm: f64,
    ) -> Result<Self> {
        if num_views == 0 || num_detectors == 0 || image_size_px == 0 {
            return Err(Error::InvalidArgument(
                "views, detectors and image size must be positive".into(),
            ));
        }
        if !(source_to_detector_mm > source_to_center_mm && source_to_center_mm > 0.0) {
            return Err(Error::InvalidArgument(
                "require source_to_detector_mm > source_to_center_mm > 0".into(),
            ));
        }
        if !(pixel_spacing_mm > 0.0) {
            return Err(Error::InvalidArgument("pixel spacing must be positive".into()));
        }
        // Radius that must stay inside the fan: half the image diagonal.
        let cover_radius =
            0.5 * image_size_px as f64 * pixel_spacing_mm * std::f64::consts::SQRT_2
                * PANEL_COVERAGE_MARGIN;
        if cover_radius >= source_to_center_mm {
            return Err(Error::InvalidArgument(format!(
                "image diagonal radius {cover_radius:.1} mm reaches the source orbit \
                 ({source_to_center_mm:.1} mm); shrink the image or its spacing"
            )));
        }
        let half_fan = (cover_radius / source_to_center_mm).asin();
        let half_panel = source_to_detector_mm * half_fan.tan();
        let detector_spacing_mm = 2.0 * half_panel / num_detectors as f64;
        Ok(Self {
            num_views,
            num_detectors,
            source_to_detector_mm,
            source_to_center_mm,
            image_size_px,
            pixel_spacing_mm,
            detector_spacing_mm,
        })
    }

    /// Full-scale scanner: 488 views, 736 detectors, 1000 mm source-detector,
    /// 512 mm source-center, 256×256 image at 1 mm pixels.
    pub fn full_scale() -> Self {
        Self::new(488, 736, 1000.0, 512.0, 256, 1.0).expect("full-scale geometry is valid")
    }

    /// Small configuration sized for CPU experiments: 180 views, 128
    /// detectors, 64×64 image at 1 mm pixels, same source distances as the
    /// full-scale setup.
    pub fn desk_scale() -> Self {
        Self::new(180, 128, 1000.0, 512.0, 64, 1.0).expect("desk-scale geometry is valid")
    }

    /// Gantry angle in radians of a 0-based view row.
    #[inline]
    pub fn view_angle(&self, row: usize) -> f64 {
        2.0 * std::f64::consts::PI * row as f64 / self.num_views as f64
    }

    /// Physical spacing of detector bins on the panel.
    pub fn detector_spacing_mm(&self) -> f64 {
        self.detector_spacing_mm
    }

    /// Detector spacing rescaled to the virtual panel through the isocenter.
    pub(crate) fn virtual_spacing_mm(&self) -> f64 {
        self.detector_spacing_mm * self.source_to_center_mm / self.source_to_detector_mm
    }

    /// Signed panel coordinate of a 0-based detector bin center.
    #[inline]
    fn panel_coord(&self, bin: usize) -> f64 {
        (bin as f64 - 0.5 * (self.num_detectors as f64 - 1.0)) * self.detector_spacing_mm
    }

    fn source_position(&self, row: usize) -> (f64, f64) {
        let beta = self.view_angle(row);
        (
            self.source_to_center_mm * beta.cos(),
            self.source_to_center_mm * beta.sin(),
        )
    }

    /// Unit vectors of a view: central-ray direction (source → isocenter) and
    /// the detector axis.
    fn view_frame(&self, row: usize) -> ((f64, f64), (f64, f64)) {
        let beta = self.view_angle(row);
        let dir = (-beta.cos(), -beta.sin());
        let axis = (-beta.sin(), beta.cos());
        (dir, axis)
    }

    fn pixel_count(&self) -> usize {
        self.image_size_px * self.image_size_px
    }
}

/// Square grayscale image; the reconstruction target.
///
/// Values are attenuation in `[0, 1]`. Construction from external data clamps
/// into that range; internal accumulators (adjoint output, filtered images)
/// use [`Image::from_unclamped`] and may carry any finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(size: usize) -> Self {
        Self { size, data: vec![0.0; size * size] }
    }

    /// Builds an image from external row-major values, clamping into `[0,1]`.
    pub fn from_values(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for a {size}×{size} image, got {}",
                size * size,
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("image values must not be NaN".into()));
        }
        let data = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { size, data })
    }

    /// Builds an image without clamping. Used for raw accumulators such as
    /// the adjoint output.
    pub fn from_unclamped(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                size * size,
                values.len()
            )));
        }
        Ok(Self { size, data: values })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.size + col] = value;
    }
}

/// Fan-beam measurement array of shape `views × detectors`.
///
/// A sinogram always keeps the full shape of its geometry. Undersampling is
/// represented by zeroed rows plus an attached [`ViewMask`] naming the rows
/// that were actually measured; rows outside the mask are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    num_views: usize,
    num_detectors: usize,
    data: Vec<f64>,
    mask: Option<ViewMask>,
}

impl Sinogram {
    pub fn zeros(num_views: usize, num_detectors: usize) -> Self {
        Self { num_views, num_detectors, data: vec![0.0; num_views * num_detectors], mask: None }
    }

    pub fn from_values(num_views: usize, num_detectors: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_views * num_detectors {
            return Err(Error::DimensionMismatch(format!(
                "expected {}×{} sinogram values, got {}",
                num_views,
                num_detectors,
                values.len()
            )));
        }
        Ok(Self { num_views, num_detectors, data: values, mask: None })
    }

    #[inline]
    pub fn num_views(&self) -> usize {
        self.num_views
    }

    #[inline]
    pub fn num_detectors(&self) -> usize {
        self.num_detectors
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, view_row: usize) -> &[f64] {
        let d = self.num_detectors;
        &self.data[view_row * d..(view_row + 1) * d]
    }

    pub fn row_mut(&mut self, view_row: usize) -> &mut [f64] {
        let d = self.num_detectors;
        &mut self.data[view_row * d..(view_row + 1) * d]
    }

    /// Mask of measured rows, if this sinogram is an undersampled measurement.
    pub fn mask(&self) -> Option<&ViewMask> {
        self.mask.as_ref()
    }

    pub fn set_mask(&mut self, mask: Option<ViewMask>) {
        self.mask = mask;
    }

    /// Copy with all rows outside `mask` set to zero and the mask attached.
    pub fn masked(&self, mask: &ViewMask) -> Sinogram {
        let mut out = Sinogram::zeros(self.num_views, self.num_detectors);
        for row0 in mask.rows0() {
            out.row_mut(row0).copy_from_slice(self.row(row0));
        }
        out.mask = Some(mask.clone());
        out
    }

    fn check_geometry(&self, geom: &FanBeamGeometry) -> Result<()> {
        if self.num_views != geom.num_views || self.num_detectors != geom.num_detectors {
            return Err(Error::DimensionMismatch(format!(
                "sinogram is {}×{}, geometry expects {}×{}",
                self.num_views, self.num_detectors, geom.num_views, geom.num_detectors
            )));
        }
        Ok(())
    }
}

/// Reconstruction filter for [`fbp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterKind {
    /// Plain band-limited ramp.
    #[default]
    RamLak,
    /// Ramp tapered by a Hann window; trades resolution for noise.
    Hann,
}

impl FilterKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ram-lak" | "ramlak" | "ramp" => Ok(Self::RamLak),
            "hann" => Ok(Self::Hann),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter '{other}' (expected 'ram-lak' or 'hann')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::RamLak => "ram-lak",
            Self::Hann => "hann",
        }
    }
}

/// Integration step along each ray, as a fraction of the pixel spacing.
const RAY_STEP_FRACTION: f64 = 0.5;

/// Clips the parametric range of `origin + t·dir` against the padded image
/// square. Returns `None` when the ray misses entirely.
fn clip_to_image(
    origin: (f64, f64),
    dir: (f64, f64),
    half_extent: f64,
) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d) in [(origin.0, dir.0), (origin.1, dir.1)] {
        if d.abs() < 1e-12 {
            if o.abs() > half_extent {
                return None;
            }
        } else {
            let a = (-half_extent - o) / d;
            let b = (half_extent - o) / d;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    if t0 < t1 {
        Some((t0, t1))
    } else {
        None
    }
}

/// Line integral along one ray by midpoint sampling of the bilinear image
/// interpolant.
fn integrate_ray(
    img: &[f64],
    n: usize,
    pixel_mm: f64,
    origin: (f64, f64),
    target: (f64, f64),
) -> f64 {
    let dx = target.0 - origin.0;
    let dy = target.1 - origin.1;
    let len = (dx * dx + dy * dy).sqrt();
    let dir = (dx / len, dy / len);
    let half_extent = 0.5 * n as f64 * pixel_mm + pixel_mm;
    let Some((t0, t1)) = clip_to_image(origin, dir, half_extent) else {
        return 0.0;
    };
    let step = RAY_STEP_FRACTION * pixel_mm;
    let nsteps = ((t1 - t0) / step).ceil() as usize;
    let center = 0.5 * (n as f64 - 1.0);
    let inv_p = 1.0 / pixel_mm;
    let mut acc = 0.0;
    for k in 0..nsteps {
        let t = t0 + (k as f64 + 0.5) * step;
        let fx = (origin.0 + t * dir.0) * inv_p + center;
        let fy = (origin.1 + t * dir.1) * inv_p + center;
        acc += bilinear_gather(img, n, fx, fy);
    }
    acc * step
}

/// Bilinear sample with zero extension outside the pixel grid. `fx` indexes
/// columns, `fy` rows.
#[inline]
fn bilinear_gather(img: &[f64], n: usize, fx: f64, fy: f64) -> f64 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let wx = fx - x0;
    let wy = fy - y0;
    let xi = x0 as isize;
    let yi = y0 as isize;
    let mut acc = 0.0;
    let nn = n as isize;
    if yi >= 0 && yi < nn {
        let base = (yi as usize) * n;
        if xi >= 0 && xi < nn {
            acc += img[base + xi as usize] * (1.0 - wx) * (1.0 - wy);
        }
        if xi + 1 >= 0 && xi + 1 < nn {
            acc += img[base + (xi + 1) as usize] * wx * (1.0 - wy);
        }
    }
    if yi + 1 >= 0 && yi + 1 < nn {
        let base = (yi + 1) as usize * n;
        if xi >= 0 && xi < nn {
            acc += img[base + xi as usize] * (1.0 - wx) * wy;
        }
        if xi + 1 >= 0 && xi + 1 < nn {
            acc += img[base + (xi + 1) as usize] * wx * wy;
        }
    }
    acc
}

/// Scatter counterpart of [`bilinear_gather`]; must mirror its weights exactly
/// for the projector pair to be adjoint.
#[inline]
fn bilinear_scatter(img: &mut [f64], n: usize, fx: f64, fy: f64, value: f64) {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let wx = fx - x0;
    let wy = fy - y0;
    let xi = x0 as isize;
    let yi = y0 as isize;
    let nn = n as isize;
    if yi >= 0 && yi < nn {
        let base = (yi as usize) * n;
        if xi >= 0 && xi < nn {
            img[base + xi as usize] += value * (1.0 - wx) * (1.0 - wy);
        }
        if xi + 1 >= 0 && xi + 1 < nn {
            img[base + (xi + 1) as usize] += value * wx * (1.0 - wy);
        }
    }
    if yi + 1 >= 0 && yi + 1 < nn {
        let base = (yi + 1) as usize * n;
        if xi >= 0 && xi < nn {
            img[base + xi as usize] += value * (1.0 - wx) * wy;
        }
        if xi + 1 >= 0 && xi + 1 < nn {
            img[base + (xi + 1) as usize] += value * wx * wy;
        }
    }
}

/// Radon transform `A` (or its restriction `A_s` when `mask` is given).
///
/// Computes the line integral for every (view, detector) pair. With a mask,
/// only the masked view rows are computed; all other rows are zero and the
/// mask is attached to the result. Deterministic and linear in the image.
pub fn forward_project(
    image: &Image,
    geom: &FanBeamGeometry,
    mask: Option<&ViewMask>,
) -> Result<Sinogram> {
    if image.size() != geom.image_size_px {
        return Err(Error::DimensionMismatch(format!(
            "image is {0}×{0}, geometry expects {1}×{1}",
            image.size(),
            geom.image_size_px
        )));
    }
    if let Some(m) = mask {
        if m.is_empty() {
            return Err(Error::EmptyMask);
        }
        if m.full_views() != geom.num_views {
            return Err(Error::DimensionMismatch(format!(
                "mask covers {} views, geometry has {}",
                m.full_views(),
                geom.num_views
            )));
        }
    }
    let rows: Vec<usize> = match mask {
        Some(m) => m.rows0().collect(),
        None => (0..geom.num_views).collect(),
    };
    let d = geom.num_detectors;
    let n = geom.image_size_px;
    let p = geom.pixel_spacing_mm;
    let img = image.data();

    let computed: Vec<(usize, Vec<f64>)> = rows
        .par_iter()
        .map(|&row| {
            let src = geom.source_position(row);
            let (dir, axis) = geom.view_frame(row);
            let mut line = vec![0.0; d];
            for (bin, out) in line.iter_mut().enumerate() {
                let s = geom.panel_coord(bin);
                let target = (
                    src.0 + geom.source_to_detector_mm * dir.0 + s * axis.0,
                    src.1 + geom.source_to_detector_mm * dir.1 + s * axis.1,
                );
                *out = integrate_ray(img, n, p, src, target);
            }
            (row, line)
        })
        .collect();

    let mut sino = Sinogram::zeros(geom.num_views, geom.num_detectors);
    for (row, line) in computed {
        sino.row_mut(row).copy_from_slice(&line);
    }
    sino.set_mask(mask.cloned());
    Ok(sino)
}

/// Exact adjoint `Aᵀ` of [`forward_project`].
///
/// Walks the same rays with the same sample points, scattering each sinogram
/// value back through the same bilinear weights. The output is a raw
/// accumulator: it is not clamped and is not a tomographic reconstruction.
pub fn back_project(sino: &Sinogram, geom: &FanBeamGeometry) -> Result<Image> {
    sino.check_geometry(geom)?;
    let n = geom.image_size_px;
    let p = geom.pixel_spacing_mm;
    let d = geom.num_detectors;
    let step = RAY_STEP_FRACTION * p;
    let half_extent = 0.5 * n as f64 * p + p;
    let center = 0.5 * (n as f64 - 1.0);
    let inv_p = 1.0 / p;

    let mut img = vec![0.0; geom.pixel_count()];
    for row in 0..geom.num_views {
        let src = geom.source_position(row);
        let (dir, axis) = geom.view_frame(row);
        for bin in 0..d {
            let value = sino.row(row)[bin];
            if value == 0.0 {
                continue;
            }
            let s = geom.panel_coord(bin);
            let target = (
                src.0 + geom.source_to_detector_mm * dir.0 + s * axis.0,
                src.1 + geom.source_to_detector_mm * dir.1 + s * axis.1,
            );
            let dx = target.0 - src.0;
            let dy = target.1 - src.1;
            let len = (dx * dx + dy * dy).sqrt();
            let rdir = (dx / len, dy / len);
            let Some((t0, t1)) = clip_to_image(src, rdir, half_extent) else {
                continue;
            };
            let nsteps = ((t1 - t0) / step).ceil() as usize;
            let scaled = value * step;
            for k in 0..nsteps {
                let t = t0 + (k as f64 + 0.5) * step;
                let fx = (src.0 + t * rdir.0) * inv_p + center;
                let fy = (src.1 + t * rdir.1) * inv_p + center;
                bilinear_scatter(&mut img, n, fx, fy, scaled);
            }
        }
    }
    Image::from_unclamped(n, img)
}

/// Band-limited ramp kernel sampled at the virtual detector spacing,
/// arranged wrap-around in a buffer of FFT length `padded`.
fn ramp_kernel_spectrum(padded: usize, spacing: f64, filter: FilterKind) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); padded];
    let inv_sp2 = 1.0 / (spacing * spacing);
    kernel[0].re = 0.25 * inv_sp2;
    let half = padded / 2;
    for k in (1..=half).step_by(2) {
        let val = -inv_sp2 / (std::f64::consts::PI * k as f64).powi(2);
        kernel[k].re = val;
        kernel[padded - k].re = val;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(padded).process(&mut kernel);
    // The kernel is even, so its spectrum is real.
    let mut spectrum: Vec<f64> = kernel.iter().map(|c| c.re).collect();
    if filter == FilterKind::Hann {
        for (idx, h) in spectrum.iter_mut().enumerate() {
            let freq = idx.min(padded - idx) as f64 / (padded as f64 / 2.0);
            *h *= 0.5 * (1.0 + (std::f64::consts::PI * freq).cos());
        }
    }
    spectrum
}

/// Per-row ramp filtering with optional cosine pre- or post-weighting.
///
/// The forward FBP path weights before filtering. The adjoint path reverses
/// the composition: the convolution itself is self-adjoint (even kernel, and
/// zero-pad embedding is the adjoint of truncation), but the diagonal cosine
/// weighting must move to the other side.
fn ramp_filter_rows(
    data: &[f64],
    geom: &FanBeamGeometry,
    filter: FilterKind,
    weighting: CosineWeighting,
) -> Vec<f64> {
    let v = geom.num_views;
    let d = geom.num_detectors;
    let sdd = geom.source_to_detector_mm;
    let cos_w: Vec<f64> = (0..d)
        .map(|bin| {
            let s = geom.panel_coord(bin);
            sdd / (sdd * sdd + s * s).sqrt()
        })
        .collect();

    let padded = (2 * d).next_power_of_two();
    let spectrum = ramp_kernel_spectrum(padded, geom.virtual_spacing_mm(), filter);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(padded);
    let inv = planner.plan_fft_inverse(padded);

    let mut out = vec![0.0; v * d];
    let mut buf = vec![Complex::new(0.0, 0.0); padded];
    for row in 0..v {
        let src = &data[row * d..(row + 1) * d];
        if src.iter().all(|&x| x == 0.0) {
            continue;
        }
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for (bin, c) in buf.iter_mut().take(d).enumerate() {
            c.re = match weighting {
                CosineWeighting::Before => src[bin] * cos_w[bin],
                CosineWeighting::After => src[bin],
            };
        }
        fwd.process(&mut buf);
        for (c, h) in buf.iter_mut().zip(&spectrum) {
            *c *= h;
        }
        inv.process(&mut buf);
        let norm = 1.0 / padded as f64;
        for (bin, o) in out[row * d..(row + 1) * d].iter_mut().enumerate() {
            *o = buf[bin].re * norm;
            if weighting == CosineWeighting::After {
                *o *= cos_w[bin];
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CosineWeighting {
    Before,
    After,
}

/// Distance-weighted pixel-driven backprojection of filtered rows.
fn backproject_filtered(filtered: &[f64], geom: &FanBeamGeometry) -> Vec<f64> {
    let n = geom.image_size_px;
    let d = geom.num_detectors;
    let v = geom.num_views;
    let p = geom.pixel_spacing_mm;
    let sod = geom.source_to_center_mm;
    let center = 0.5 * (n as f64 - 1.0);
    let inv_vsp = 1.0 / geom.virtual_spacing_mm();
    let det_center = 0.5 * (d as f64 - 1.0);
    // Global scale: Δβ for the angular sum, virtual spacing for the discrete
    // convolution, and 1/2 because a full circle measures every line twice.
    let scale = 0.5 * (2.0 * std::f64::consts::PI / v as f64) * geom.virtual_spacing_mm();

    let frames: Vec<((f64, f64), (f64, f64), (f64, f64))> = (0..v)
        .map(|row| {
            let src = geom.source_position(row);
            let (dir, axis) = geom.view_frame(row);
            (src, dir, axis)
        })
        .collect();

    let mut img = vec![0.0; n * n];
    img.par_chunks_mut(n).enumerate().for_each(|(row, out_row)| {
        let y = (row as f64 - center) * p;
        for (col, out) in out_row.iter_mut().enumerate() {
            let x = (col as f64 - center) * p;
            let mut acc = 0.0;
            for (view, &(src, dir, axis)) in frames.iter().enumerate() {
                let rx = x - src.0;
                let ry = y - src.1;
                let along = rx * dir.0 + ry * dir.1;
                let perp = rx * axis.0 + ry * axis.1;
                let u = along / sod;
                let s_virtual = sod * perp / along;
                let jf = s_virtual * inv_vsp + det_center;
                let j0 = jf.floor();
                let w = jf - j0;
                let j = j0 as isize;
                let base = view * d;
                let mut q = 0.0;
                if j >= 0 && (j as usize) < d {
                    q += filtered[base + j as usize] * (1.0 - w);
                }
                if j + 1 >= 0 && ((j + 1) as usize) < d {
                    q += filtered[base + (j + 1) as usize] * w;
                }
                acc += q / (u * u);
            }
            *out = acc * scale;
        }
    });
    img
}

/// Adjoint of [`backproject_filtered`]: scatters an image-domain gradient
/// back onto filtered-row coordinates with identical weights.
fn backproject_filtered_adjoint(img_grad: &[f64], geom: &FanBeamGeometry) -> Vec<f64> {
    let n = geom.image_size_px;
    let d = geom.num_detectors;
    let v = geom.num_views;
    let p = geom.pixel_spacing_mm;
    let sod = geom.source_to_center_mm;
    let center = 0.5 * (n as f64 - 1.0);
    let inv_vsp = 1.0 / geom.virtual_spacing_mm();
    let det_center = 0.5 * (d as f64 - 1.0);
    let scale = 0.5 * (2.0 * std::f64::consts::PI / v as f64) * geom.virtual_spacing_mm();

    let mut out = vec![0.0; v * d];
    for row in 0..n {
        let y = (row as f64 - center) * p;
        for col in 0..n {
            let g = img_grad[row * n + col] * scale;
            if g == 0.0 {
                continue;
            }
            let x = (col as f64 - center) * p;
            for view in 0..v {
                let src = geom.source_position(view);
                let (dir, axis) = geom.view_frame(view);
                let rx = x - src.0;
                let ry = y - src.1;
                let along = rx * dir.0 + ry * dir.1;
                let perp = rx * axis.0 + ry * axis.1;
                let u = along / sod;
                let s_virtual = sod * perp / along;
                let jf = s_virtual * inv_vsp + det_center;
                let j0 = jf.floor();
                let w = jf - j0;
                let j = j0 as isize;
                let base = view * d;
                let gg = g / (u * u);
                if j >= 0 && (j as usize) < d {
                    out[base + j as usize] += gg * (1.0 - w);
                }
                if j + 1 >= 0 && ((j + 1) as usize) < d {
                    out[base + (j + 1) as usize] += gg * w;
                }
            }
        }
    }
    out
}

/// The linear part of filtered back-projection: cosine weighting, ramp
/// filtering, distance-weighted backprojection. No mask rescaling, no
/// clamping. This is the differentiable path used by the training loss.
pub fn fbp_linear(sino: &Sinogram, geom: &FanBeamGeometry, filter: FilterKind) -> Result<Vec<f64>> {
    sino.check_geometry(geom)?;
    let filtered = ramp_filter_rows(sino.data(), geom, filter, CosineWeighting::Before);
    Ok(backproject_filtered(&filtered, geom))
}

/// Adjoint of [`fbp_linear`] with respect to the standard inner products.
/// Maps an image-domain gradient to a sinogram-domain gradient.
pub fn fbp_linear_adjoint(
    img_grad: &[f64],
    geom: &FanBeamGeometry,
    filter: FilterKind,
) -> Result<Vec<f64>> {
    if img_grad.len() != geom.pixel_count() {
        return Err(Error::DimensionMismatch(format!(
            "image gradient has {} values, geometry expects {}",
            img_grad.len(),
            geom.pixel_count()
        )));
    }
    let scattered = backproject_filtered_adjoint(img_grad, geom);
    Ok(ramp_filter_rows(&scattered, geom, filter, CosineWeighting::After))
}

/// Filtered back-projection `A†`.
///
/// If the sinogram carries a view mask, its zero rows are used as-is and the
/// image is rescaled by `num_views / |mask|` so intensity stays comparable
/// across sampling rates. Output values are clamped to `[0, 1]`.
pub fn fbp(sino: &Sinogram, geom: &FanBeamGeometry, filter: FilterKind) -> Result<Image> {
    sino.check_geometry(geom)?;
    let gain = match sino.mask() {
        Some(mask) if mask.is_empty() => return Err(Error::EmptyMask),
        Some(mask) => geom.num_views as f64 / mask.len() as f64,
        None => 1.0,
    };
    let mut raw = fbp_linear(sino, geom, filter)?;
    for val in raw.iter_mut() {
        *val = (*val * gain).clamp(0.0, 1.0);
    }
    Image::from_unclamped(geom.image_size_px, raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_geom() -> FanBeamGeometry {
        FanBeamGeometry::new(60, 48, 1000.0, 512.0, 64, 1.0).unwrap()
    }

    fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Image {
        let vals: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::from_values(n, vals).unwrap()
    }

    fn random_sino(geom: &FanBeamGeometry, rng: &mut ChaCha8Rng) -> Sinogram {
        let len = geom.num_views * geom.num_detectors;
        let vals: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Sinogram::from_values(geom.num_views, geom.num_detectors, vals).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn geometry_validation() {
        assert!(FanBeamGeometry::new(0, 10, 1000.0, 512.0, 64, 1.0).is_err());
        assert!(FanBeamGeometry::new(10, 10, 500.0, 512.0, 64, 1.0).is_err());
        assert!(FanBeamGeometry::new(10, 10, 1000.0, 512.0, 64, 0.0).is_err());
        // Image too large for the source orbit.
        assert!(FanBeamGeometry::new(10, 10, 1000.0, 100.0, 256, 1.0).is_err());
        let g = FanBeamGeometry::full_scale();
        assert_eq!(g.num_views, 488);
        assert_eq!(g.num_detectors, 736);
        assert_eq!(g.source_to_detector_mm, 1000.0);
        assert_eq!(g.source_to_center_mm, 512.0);
        assert_eq!(g.image_size_px, 256);
    }

    #[test]
    fn view_angles_equispaced() {
        let g = small_geom();
        let step = 2.0 * std::f64::consts::PI / 60.0;
        for i in 1..60 {
            let diff = g.view_angle(i) - g.view_angle(i - 1);
            assert!((diff - step).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let g = small_geom();
        let img = Image::zeros(64);
        let sino = forward_project(&img, &g, None).unwrap();
        assert!(sino.data().iter().all(|&v| v == 0.0));
        let mask = ViewMask::new(vec![1, 5, 9], 60).unwrap();
        let sino = forward_project(&img, &g, Some(&mask)).unwrap();
        assert!(sino.data().iter().all(|&v| v == 0.0));
        assert_eq!(sino.mask().unwrap(), &mask);
    }

    #[test]
    fn scaling_by_two_is_exact() {
        let g = small_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_image(64, &mut rng);
        let doubled =
            Image::from_unclamped(64, img.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let s1 = forward_project(&img, &g, None).unwrap();
        let s2 = forward_project(&doubled, &g, None).unwrap();
        for (a, b) in s1.data().iter().zip(s2.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn linearity_of_combinations() {
        let g = small_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x1 = random_image(64, &mut rng);
        let x2 = random_image(64, &mut rng);
        let (a, b) = (0.37, 1.21);
        let combo = Image::from_unclamped(
            64,
            x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let s_combo = forward_project(&combo, &g, None).unwrap();
        let s1 = forward_project(&x1, &g, None).unwrap();
        let s2 = forward_project(&x2, &g, None).unwrap();
        for ((sc, p), q) in s_combo.data().iter().zip(s1.data()).zip(s2.data()) {
            let expect = a * p + b * q;
            let denom = expect.abs().max(1.0);
            assert!((sc - expect).abs() / denom < 1e-5);
        }
    }

    #[test]
    fn masked_projection_matches_zeroed_full() {
        let g = small_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(64, &mut rng);
        let mask = ViewMask::new(vec![2, 3, 17, 44, 60], 60).unwrap();
        let full = forward_project(&img, &g, None).unwrap();
        let masked = forward_project(&img, &g, Some(&mask)).unwrap();
        for row in 0..60 {
            if mask.contains(row + 1) {
                assert_eq!(masked.row(row), full.row(row));
            } else {
                assert!(masked.row(row).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn adjoint_dot_product_identity() {
        let g = small_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let x = random_image(64, &mut rng);
            let y = random_sino(&g, &mut rng);
            let ax = forward_project(&x, &g, None).unwrap();
            let aty = back_project(&y, &g).unwrap();
            let lhs = dot(ax.data(), y.data());
            let rhs = dot(x.data(), aty.data());
            let norm_ax = dot(ax.data(), ax.data()).sqrt();
            let norm_y = dot(y.data(), y.data()).sqrt();
            let rel = (lhs - rhs).abs() / (norm_ax * norm_y);
            assert!(rel <= 1e-3, "adjoint mismatch: rel={rel:e}");
        }
    }

    #[test]
    fn zero_sinogram_backprojects_to_zero() {
        let g = small_geom();
        let sino = Sinogram::zeros(60, 48);
        let img = back_project(&sino, &g).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
        let rec = fbp(&sino, &g, FilterKind::RamLak).unwrap();
        assert!(rec.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_bin_backprojection_lies_on_one_ray() {
        let g = small_geom();
        let mut sino = Sinogram::zeros(60, 48);
        let (view, bin) = (13, 30);
        sino.row_mut(view)[bin] = 1.0;
        let img = back_project(&sino, &g).unwrap();

        // The support must hug the source→detector line of that single ray.
        let src = g.source_position(view);
        let (dir, axis) = g.view_frame(view);
        let s = g.panel_coord(bin);
        let target = (
            src.0 + g.source_to_detector_mm * dir.0 + s * axis.0,
            src.1 + g.source_to_detector_mm * dir.1 + s * axis.1,
        );
        let dx = target.0 - src.0;
        let dy = target.1 - src.1;
        let len = (dx * dx + dy * dy).sqrt();
        let center = 0.5 * (64.0 - 1.0);
        let mut support = 0usize;
        for row in 0..64 {
            for col in 0..64 {
                if img.get(row, col).abs() > 1e-12 {
                    support += 1;
                    let px = (col as f64 - center) * g.pixel_spacing_mm;
                    let py = (row as f64 - center) * g.pixel_spacing_mm;
                    // Perpendicular distance from pixel center to the ray.
                    let dist = ((px - src.0) * dy - (py - src.1) * dx).abs() / len;
                    assert!(dist <= 2.0 * g.pixel_spacing_mm, "pixel off-ray: {dist}");
                }
            }
        }
        assert!(support > 0, "backprojection produced empty support");
    }

    #[test]
    fn sinogram_shape_checks() {
        let g = small_geom();
        let img = Image::zeros(32);
        assert!(matches!(
            forward_project(&img, &g, None),
            Err(Error::DimensionMismatch(_))
        ));
        let bad = Sinogram::zeros(10, 48);
        assert!(back_project(&bad, &g).is_err());
        assert!(fbp(&bad, &g, FilterKind::RamLak).is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        let g = small_geom();
        let img = Image::zeros(64);
        assert!(matches!(
            ViewMask::new(Vec::<usize>::new(), 60),
            Err(Error::EmptyMask)
        ));
        // A sinogram cannot carry an empty mask either; the constructor above
        // is the only way to build one.
        let sino = forward_project(&img, &g, None).unwrap();
        assert!(sino.mask().is_none());
    }

    #[test]
    fn image_creation_clamps_and_validates() {
        let img = Image::from_values(2, vec![-0.5, 0.25, 1.5, 0.75]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.25, 1.0, 0.75]);
        assert!(Image::from_values(2, vec![0.0; 3]).is_err());
        assert!(Image::from_values(2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn filter_kind_parsing() {
        assert_eq!(FilterKind::parse("ram-lak").unwrap(), FilterKind::RamLak);
        assert_eq!(FilterKind::parse("hann").unwrap(), FilterKind::Hann);
        assert!(FilterKind::parse("butterworth").is_err());
    }

    #[test]
    fn fbp_adjoint_dot_product() {
        let g = small_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for filter in [FilterKind::RamLak, FilterKind::Hann] {
            let y = random_sino(&g, &mut rng);
            let gimg: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fy = fbp_linear(&y, &g, filter).unwrap();
            let fty = fbp_linear_adjoint(&gimg, &g, filter).unwrap();
            let lhs = dot(&fy, &gimg);
            let rhs = dot(y.data(), &fty);
            let rel = (lhs - rhs).abs() / lhs.abs().max(1e-12);
            assert!(rel < 1e-9, "fbp adjoint mismatch ({filter:?}): rel={rel:e}");
        }
    }
}
