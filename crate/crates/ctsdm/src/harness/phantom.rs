//! Procedural test phantoms: the classic Shepp-Logan head slice and seeded
//! random-ellipse images.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Image;

/// One ellipse in normalized `[-1, 1]²` coordinates.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    intensity: f64,
    half_x: f64,
    half_y: f64,
    center_x: f64,
    center_y: f64,
    rotation_rad: f64,
}

impl Ellipse {
    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let (sin, cos) = self.rotation_rad.sin_cos();
        let xr = dx * cos + dy * sin;
        let yr = -dx * sin + dy * cos;
        (xr / self.half_x).powi(2) + (yr / self.half_y).powi(2) <= 1.0
    }
}

/// The ten ellipses of the contrast-adjusted Shepp-Logan phantom; additive
/// intensities land in `[0, 1]`.
fn shepp_logan_ellipses() -> [Ellipse; 10] {
    let deg = std::f64::consts::PI / 180.0;
    [
        Ellipse { intensity: 1.0, half_x: 0.69, half_y: 0.92, center_x: 0.0, center_y: 0.0, rotation_rad: 0.0 },
        Ellipse { intensity: -0.8, half_x: 0.6624, half_y: 0.874, center_x: 0.0, center_y: -0.0184, rotation_rad: 0.0 },
        Ellipse { intensity: -0.2, half_x: 0.11, half_y: 0.31, center_x: 0.22, center_y: 0.0, rotation_rad: -18.0 * deg },
        Ellipse { intensity: -0.2, half_x: 0.16, half_y: 0.41, center_x: -0.22, center_y: 0.0, rotation_rad: 18.0 * deg },
        Ellipse { intensity: 0.1, half_x: 0.21, half_y: 0.25, center_x: 0.0, center_y: 0.35, rotation_rad: 0.0 },
        Ellipse { intensity: 0.1, half_x: 0.046, half_y: 0.046, center_x: 0.0, center_y: 0.1, rotation_rad: 0.0 },
        Ellipse { intensity: 0.1, half_x: 0.046, half_y: 0.046, center_x: 0.0, center_y: -0.1, rotation_rad: 0.0 },
        Ellipse { intensity: 0.1, half_x: 0.046, half_y: 0.023, center_x: -0.08, center_y: -0.605, rotation_rad: 0.0 },
        Ellipse { intensity: 0.1, half_x: 0.023, half_y: 0.023, center_x: 0.0, center_y: -0.606, rotation_rad: 0.0 },
        Ellipse { intensity: 0.1, half_x: 0.023, half_y: 0.046, center_x: 0.06, center_y: -0.605, rotation_rad: 0.0 },
    ]
}

/// Rasterization uses a small subpixel grid; sharp ellipse edges otherwise
/// alias badly at coarse resolutions.
const SUPERSAMPLE: usize = 2;

fn rasterize(n: usize, ellipses: &[Ellipse]) -> Vec<f64> {
    let mut vals = vec![0.0; n * n];
    let inv_half = 2.0 / n as f64;
    let ss = SUPERSAMPLE;
    let sub = 1.0 / ss as f64;
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for sy in 0..ss {
                for sx in 0..ss {
                    // Pixel (row, col) spans [col, col+1]×[row, row+1] in grid
                    // units; map subsample centers into [-1, 1]² with y up.
                    let x = (col as f64 + (sx as f64 + 0.5) * sub) * inv_half - 1.0;
                    let y = 1.0 - (row as f64 + (sy as f64 + 0.5) * sub) * inv_half;
                    for e in ellipses {
                        if e.contains(x, y) {
                            acc += e.intensity;
                        }
                    }
                }
            }
            vals[row * n + col] = acc / (ss * ss) as f64;
        }
    }
    vals
}

/// Classic ten-ellipse head phantom at `n × n`, intensities in `[0, 1]`.
pub fn shepp_logan(n: usize) -> Image {
    Image::from_values(n, rasterize(n, &shepp_logan_ellipses())).expect("phantom is in range")
}

/// Recipe for a procedural phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size_px: usize,
    /// Ellipse count for the random kind; ignored for Shepp-Logan.
    pub num_ellipses: usize,
    /// Intensity draw range for random ellipses.
    pub intensity_lo: f64,
    pub intensity_hi: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
}

impl PhantomKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "shepp-logan" => Ok(Self::SheppLogan),
            "random" | "random-ellipses" => Ok(Self::RandomEllipses),
            other => Err(Error::InvalidArgument(format!(
                "unknown phantom kind '{other}' (expected 'shepp-logan' or 'random')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SheppLogan => "shepp-logan",
            Self::RandomEllipses => "random",
        }
    }
}

impl PhantomSpec {
    pub fn random(size_px: usize, seed: u64) -> Self {
        Self {
            kind: PhantomKind::RandomEllipses,
            size_px,
            num_ellipses: 8,
            intensity_lo: 0.15,
            intensity_hi: 0.6,
            seed,
        }
    }
}

/// Seeded superposition of random ellipses, clamped to `[0, 1]`.
///
/// The first ellipse is a large near-centered body so every phantom has
/// substantial support; the rest modulate it.
pub fn random_phantom(spec: &PhantomSpec) -> Result<Image> {
    if spec.size_px == 0 {
        return Err(Error::InvalidArgument("phantom size must be positive".into()));
    }
    if spec.kind == PhantomKind::SheppLogan {
        return Ok(shepp_logan(spec.size_px));
    }
    if spec.num_ellipses == 0 {
        return Err(Error::InvalidArgument("need at least one ellipse".into()));
    }
    if !(spec.intensity_lo.is_finite()
        && spec.intensity_hi.is_finite()
        && spec.intensity_lo <= spec.intensity_hi)
    {
        return Err(Error::InvalidArgument("bad intensity range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ellipses = Vec::with_capacity(spec.num_ellipses);
    ellipses.push(Ellipse {
        intensity: rng.gen_range(0.5..0.9),
        half_x: rng.gen_range(0.5..0.75),
        half_y: rng.gen_range(0.5..0.75),
        center_x: rng.gen_range(-0.08..0.08),
        center_y: rng.gen_range(-0.08..0.08),
        rotation_rad: rng.gen_range(0.0..std::f64::consts::PI),
    });
    for _ in 1..spec.num_ellipses {
        let mag = rng.gen_range(spec.intensity_lo..spec.intensity_hi.max(spec.intensity_lo + 1e-9));
        let sign = if rng.gen_bool(0.4) { -1.0 } else { 1.0 };
        ellipses.push(Ellipse {
            intensity: sign * mag,
            half_x: rng.gen_range(0.06..0.4),
            half_y: rng.gen_range(0.06..0.4),
            center_x: rng.gen_range(-0.55..0.55),
            center_y: rng.gen_range(-0.55..0.55),
            rotation_rad: rng.gen_range(0.0..std::f64::consts::PI),
        });
    }
    let vals: Vec<f64> = rasterize(spec.size_px, &ellipses)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Image::from_values(spec.size_px, vals)
}
