//! The reverse sampling loop and the end-to-end reconstruction pipeline.
//!
//! Starting from measurements at whatever sampling rate was actually
//! acquired, the loop walks the schedule down to step zero. At each step it
//! asks the restoration operator for a full-view estimate, then re-degrades
//! that estimate at the current and the next mask and applies
//! `y_{s−1} = y_s − D(ŷ_0, s) + D(ŷ_0, s−1)`, so restoration errors never
//! accumulate across steps. With nested masks this update only ever *adds*
//! estimated rows: everything already measured passes through untouched,
//! which makes data consistency a structural property rather than a hope.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{fbp, FanBeamGeometry, FilterKind, Image, Sinogram};
use crate::restorer::{refine, RefinerModel, RestoreOperator};
use crate::sampling::{trajectory_from_measured, GroupPartition, MaskTrajectory, StepSchedule};

/// Everything needed to reconstruct one measurement set.
#[derive(Debug, Clone)]
pub struct ReconstructionRequest {
    /// Zero-filled measurements with the measured-view mask attached.
    pub measurements: Sinogram,
    pub geometry: FanBeamGeometry,
    pub schedule: StepSchedule,
    pub partition: GroupPartition,
    /// Seed for the grouped-random completion order of the trajectory.
    pub seed: u64,
    pub filter: FilterKind,
}

/// Output bundle of [`reconstruct`].
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Full-view sinogram estimate.
    pub sinogram_estimate: Sinogram,
    /// FBP of the estimate.
    pub image_raw: Image,
    /// After image-domain refinement (equals `image_raw` when no refiner was
    /// supplied).
    pub image_refined: Image,
    /// Step the reverse loop started from.
    pub start_step: usize,
    /// Max-abs disagreement between the estimate and the input measurements
    /// on the measured rows; structurally tiny.
    pub data_consistency_residual: f64,
    /// `(step, residual)` trace of measured-row consistency per step.
    pub per_step_trace: Option<Vec<(usize, f64)>>,
}

/// Reverse sampling loop from step `t_start` down to zero.
///
/// `y_start` must be zero outside the trajectory's mask at `t_start` (it is
/// re-masked defensively). The trajectory must be nested; this is what makes
/// the additive update exact on measured rows. Returns the full-view estimate
/// `y_0`.
pub fn tacos(
    restorer: &dyn RestoreOperator,
    y_start: &Sinogram,
    traj: &MaskTrajectory,
    t_start: usize,
) -> Result<Sinogram> {
    Ok(tacos_traced(restorer, y_start, traj, t_start, false)?.0)
}

/// [`tacos`] plus an optional per-step trace of the max-abs residual on the
/// start mask's rows.
pub fn tacos_traced(
    restorer: &dyn RestoreOperator,
    y_start: &Sinogram,
    traj: &MaskTrajectory,
    t_start: usize,
    trace: bool,
) -> Result<(Sinogram, Vec<(usize, f64)>)> {
    let total = traj.schedule().total_steps();
    if t_start > total {
        return Err(Error::StepOutOfRange { step: t_start, max: total });
    }
    traj.validate_nested()?;
    let start_mask = traj.mask(t_start)?;
    let mut y = y_start.masked(start_mask);
    let reference = y.clone();
    let mut steps = Vec::new();

    for s in (1..=t_start).rev() {
        let mask_s = traj.mask(s)?;
        let y0_hat = restorer.restore(&y, mask_s, s)?;
        if y0_hat.num_views() != y.num_views() || y0_hat.num_detectors() != y.num_detectors() {
            return Err(Error::DimensionMismatch(
                "restorer changed the sinogram shape".into(),
            ));
        }
        let d_s = y0_hat.masked(mask_s);
        let d_prev = y0_hat.masked(traj.mask(s - 1)?);
        let data = y.data_mut();
        for ((val, ds), dp) in data.iter_mut().zip(d_s.data()).zip(d_prev.data()) {
            *val = *val - ds + dp;
        }
        y.set_mask(Some(traj.mask(s - 1)?.clone()));
        if trace {
            steps.push((s - 1, masked_residual(&y, &reference)));
        }
    }
    Ok((y, steps))
}

/// Max-abs difference on the reference's measured rows.
fn masked_residual(current: &Sinogram, reference: &Sinogram) -> f64 {
    let mask = reference.mask().expect("reference carries the start mask");
    let mut worst: f64 = 0.0;
    for row in mask.rows0() {
        for (a, b) in current.row(row).iter().zip(reference.row(row)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Full pipeline: align a trajectory with the measured mask, run the reverse
/// loop, back-project, refine.
pub fn reconstruct(
    req: &ReconstructionRequest,
    restorer: &dyn RestoreOperator,
    refiner: Option<&RefinerModel>,
) -> Result<ReconstructionResult> {
    let measured = req
        .measurements
        .mask()
        .ok_or_else(|| {
            Error::InvalidArgument("measurements must carry their view mask".into())
        })?
        .clone();
    if req.measurements.num_views() != req.geometry.num_views
        || req.measurements.num_detectors() != req.geometry.num_detectors
    {
        return Err(Error::DimensionMismatch(format!(
            "measurements are {}×{}, geometry expects {}×{}",
            req.measurements.num_views(),
            req.measurements.num_detectors(),
            req.geometry.num_views,
            req.geometry.num_detectors
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let (t_star, traj) =
        trajectory_from_measured(&measured, &req.schedule, &req.partition, &mut rng)?;
    let (estimate, trace) = tacos_traced(restorer, &req.measurements, &traj, t_star, true)?;

    let residual = {
        let mut reference = req.measurements.clone();
        reference.set_mask(Some(measured.clone()));
        masked_residual(&estimate, &reference)
    };

    let image_raw = fbp(&estimate, &req.geometry, req.filter)?;
    let image_refined = match refiner {
        Some(model) => refine(model, &image_raw)?,
        None => image_raw.clone(),
    };
    Ok(ReconstructionResult {
        sinogram_estimate: estimate,
        image_raw,
        image_refined,
        start_step: t_star,
        data_consistency_residual: residual,
        per_step_trace: Some(trace),
    })
}
