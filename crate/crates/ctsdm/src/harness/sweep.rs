//! Protocol drivers: the sampling-rate sweep, the sampling-strategy
//! comparison, and the view-disturbance robustness evaluation.
//!
//! Every run is a pure function of its config seed: phantom generation, mask
//! draws, and trajectory completion all derive their streams from it, so
//! reports are byte-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{reconstruct, ReconstructionRequest};
use crate::error::{Error, Result};
use crate::geometry::{fbp, forward_project, FanBeamGeometry, FilterKind, Image, Sinogram};
use crate::harness::metrics::{psnr, ssim};
use crate::harness::phantom::{random_phantom, PhantomSpec};
use crate::restorer::{RefinerModel, RestoreOperator};
use crate::sampling::{GroupPartition, SelectionStrategy, StepSchedule};

/// One evaluated reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub strategy: String,
    pub view_count: usize,
    pub image_id: String,
    /// `"sdm"` for the diffusion pipeline, `"fbp"` for zero-filled FBP.
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Aggregate over all rows of one (strategy, view count, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub view_count: usize,
    pub method: String,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

/// Rows plus aggregates of one experiment run.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// Mean ± sample std per (strategy, view_count, method), in first-seen
    /// row order.
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(String, usize, String)> = Vec::new();
        for row in &self.rows {
            let key = (row.strategy.clone(), row.view_count, row.method.clone());
            if !order.contains(&key) {
                order.push(key);
            }
        }
        order
            .into_iter()
            .map(|(strategy, view_count, method)| {
                let cell: Vec<&MetricRow> = self
                    .rows
                    .iter()
                    .filter(|r| {
                        r.strategy == strategy
                            && r.view_count == view_count
                            && r.method == method
                    })
                    .collect();
                let psnrs: Vec<f64> = cell.iter().map(|r| r.psnr_db).collect();
                let ssims: Vec<f64> = cell.iter().map(|r| r.ssim).collect();
                let (psnr_mean, psnr_std) = mean_std(&psnrs);
                let (ssim_mean, ssim_std) = mean_std(&ssims);
                SummaryRow { strategy, view_count, method, psnr_mean, psnr_std, ssim_mean, ssim_std }
            })
            .collect()
    }

    /// Mean PSNR of one (strategy, count, method) cell.
    pub fn mean_psnr(&self, strategy: &str, view_count: usize, method: &str) -> Option<f64> {
        self.summarize()
            .into_iter()
            .find(|s| s.strategy == strategy && s.view_count == view_count && s.method == method)
            .map(|s| s.psnr_mean)
    }

    /// Per-row CSV with header `strategy,view_count,image_id,method,psnr_db,ssim`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,view_count,image_id,method,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.strategy, r.view_count, r.image_id, r.method, r.psnr_db, r.ssim
            ));
        }
        out
    }

    /// Summary CSV with header
    /// `strategy,view_count,method,psnr_mean,psnr_std,ssim_mean,ssim_std`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("strategy,view_count,method,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for s in self.summarize() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.strategy, s.view_count, s.method, s.psnr_mean, s.psnr_std, s.ssim_mean, s.ssim_std
            ));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sampling-rate sweep protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Measured view counts to evaluate; the default mirrors the full-scale
    /// count ladder rescaled to the desk geometry.
    pub view_counts: Vec<usize>,
    pub strategies: Vec<SelectionStrategy>,
    pub num_test_images: usize,
    pub seed: u64,
    pub filter: FilterKind,
}

/// Full-scale ladder of measured view counts.
pub const FULL_SCALE_COUNTS: [usize; 8] = [116, 100, 74, 60, 55, 40, 30, 23];

/// The same ladder rescaled to the 180-view desk geometry.
pub const DESK_SCALE_COUNTS: [usize; 8] = [45, 37, 27, 22, 20, 15, 11, 9];

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            view_counts: DESK_SCALE_COUNTS.to_vec(),
            strategies: vec![SelectionStrategy::GroupedRandom],
            num_test_images: 10,
            seed: 0,
            filter: FilterKind::RamLak,
        }
    }
}

impl SweepConfig {
    fn validate(&self, geom: &FanBeamGeometry) -> Result<()> {
        if self.view_counts.is_empty() || self.strategies.is_empty() || self.num_test_images == 0 {
            return Err(Error::InvalidArgument(
                "sweep needs counts, strategies and test images".into(),
            ));
        }
        if let Some(&bad) = self.view_counts.iter().find(|&&c| c == 0 || c > geom.num_views) {
            return Err(Error::InvalidArgument(format!(
                "view count {bad} outside 1..={}",
                geom.num_views
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-case stream derivation, independent of loop order.
fn case_seed(base: u64, strategy: SelectionStrategy, count: usize, image: usize, rep: usize) -> u64 {
    let mut s = splitmix64(base);
    s = splitmix64(s ^ strategy.stable_id());
    s = splitmix64(s ^ count as u64);
    s = splitmix64(s ^ image as u64);
    splitmix64(s ^ rep as u64)
}

fn test_phantom(base_seed: u64, image: usize, size: usize) -> Result<Image> {
    let seed = splitmix64(splitmix64(base_seed) ^ 0xDEAD ^ (image as u64) << 8);
    random_phantom(&PhantomSpec::random(size, seed))
}

struct EvalCase<'a> {
    strategy: SelectionStrategy,
    count: usize,
    image_idx: usize,
    image_id: String,
    rep: usize,
    phantom: &'a Image,
    projection: &'a Sinogram,
}

fn evaluate_case(
    case: &EvalCase,
    geom: &FanBeamGeometry,
    sched: &StepSchedule,
    part: &GroupPartition,
    restorer: &dyn RestoreOperator,
    refiner: Option<&RefinerModel>,
    filter: FilterKind,
    rows: &mut Vec<MetricRow>,
) -> Result<()> {
    let seed = case_seed(0, case.strategy, case.count, case.image_idx, case.rep);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = case.strategy.draw(case.count, part, &mut rng)?;
    let measurements = case.projection.masked(&mask);

    let req = ReconstructionRequest {
        measurements: measurements.clone(),
        geometry: geom.clone(),
        schedule: sched.clone(),
        partition: part.clone(),
        seed: splitmix64(seed ^ 0xA11CE),
        filter,
    };
    let res = reconstruct(&req, restorer, refiner)?;
    rows.push(MetricRow {
        strategy: case.strategy.name().into(),
        view_count: case.count,
        image_id: case.image_id.clone(),
        method: "sdm".into(),
        psnr_db: psnr(&res.image_refined, case.phantom, 1.0)?,
        ssim: ssim(&res.image_refined, case.phantom)?,
    });

    let baseline = fbp(&measurements, geom, filter)?;
    rows.push(MetricRow {
        strategy: case.strategy.name().into(),
        view_count: case.count,
        image_id: case.image_id.clone(),
        method: "fbp".into(),
        psnr_db: psnr(&baseline, case.phantom, 1.0)?,
        ssim: ssim(&baseline, case.phantom)?,
    });
    Ok(())
}

/// Evaluates one trained model pair across sampling strategies and view
/// counts on seeded held-out phantoms. Each case contributes two rows: the
/// diffusion reconstruction (`sdm`) and the zero-filled FBP baseline (`fbp`).
pub fn run_sweep(
    cfg: &SweepConfig,
    geom: &FanBeamGeometry,
    sched: &StepSchedule,
    part: &GroupPartition,
    restorer: &dyn RestoreOperator,
    refiner: Option<&RefinerModel>,
) -> Result<MetricReport> {
    cfg.validate(geom)?;
    let phantoms: Vec<Image> = (0..cfg.num_test_images)
        .map(|i| test_phantom(cfg.seed, i, geom.image_size_px))
        .collect::<Result<_>>()?;
    let projections: Vec<Sinogram> = phantoms
        .iter()
        .map(|img| forward_project(img, geom, None))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &strategy in &cfg.strategies {
        for &count in &cfg.view_counts {
            for (idx, phantom) in phantoms.iter().enumerate() {
                let case = EvalCase {
                    strategy,
                    count,
                    image_idx: idx,
                    image_id: format!("img{idx}"),
                    rep: 0,
                    phantom,
                    projection: &projections[idx],
                };
                evaluate_case(&case, geom, sched, part, restorer, refiner, cfg.filter, &mut rows)?;
            }
        }
    }
    Ok(MetricReport { rows })
}

/// View-disturbance robustness protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceConfig {
    pub view_counts: Vec<usize>,
    /// Number of independent disturbed mask draws per count.
    pub num_seeds: usize,
    pub num_test_images: usize,
    pub seed: u64,
    pub filter: FilterKind,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            view_counts: vec![22, 9],
            num_seeds: 10,
            num_test_images: 3,
            seed: 0,
            filter: FilterKind::RamLak,
        }
    }
}

/// Evaluates a model on disturbed test masks: per count, `num_seeds`
/// independent grouped-random masks simulate view availability varying
/// between scans. With `disturbed = false` the masks are the deterministic
/// equispaced set (one rep), reproducing the plain sweep numbers.
pub fn disturbance_eval(
    cfg: &DisturbanceConfig,
    geom: &FanBeamGeometry,
    sched: &StepSchedule,
    part: &GroupPartition,
    restorer: &dyn RestoreOperator,
    refiner: Option<&RefinerModel>,
    disturbed: bool,
) -> Result<MetricReport> {
    if cfg.view_counts.is_empty() || cfg.num_seeds == 0 || cfg.num_test_images == 0 {
        return Err(Error::InvalidArgument(
            "disturbance eval needs counts, seeds and test images".into(),
        ));
    }
    let phantoms: Vec<Image> = (0..cfg.num_test_images)
        .map(|i| test_phantom(cfg.seed, i, geom.image_size_px))
        .collect::<Result<_>>()?;
    let projections: Vec<Sinogram> = phantoms
        .iter()
        .map(|img| forward_project(img, geom, None))
        .collect::<Result<_>>()?;

    let strategy =
        if disturbed { SelectionStrategy::GroupedRandom } else { SelectionStrategy::Fixed };
    let reps = if disturbed { cfg.num_seeds } else { 1 };

    let mut rows = Vec::new();
    for &count in &cfg.view_counts {
        for rep in 0..reps {
            for (idx, phantom) in phantoms.iter().enumerate() {
                let case = EvalCase {
                    strategy,
                    count,
                    image_idx: idx,
                    image_id: if disturbed {
                        format!("s{rep}_img{idx}")
                    } else {
                        format!("img{idx}")
                    },
                    rep,
                    phantom,
                    projection: &projections[idx],
                };
                evaluate_case(&case, geom, sched, part, restorer, refiner, cfg.filter, &mut rows)?;
            }
        }
    }
    Ok(MetricReport { rows })
}
