//! View-sampling machinery: the step↔view-count schedule, grouped view
//! partitions, mask selection strategies, nested mask trajectories, and the
//! degradation operator that zeroes unmeasured sinogram rows.
//!
//! View indices are 1-based throughout (view `i` is sinogram row `i − 1`),
//! matching the on-disk mask format. All randomized selections take an
//! explicit RNG and are bit-reproducible for a fixed seed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Sinogram;

/// Sorted set of measured view indices in `[1, full_views]`. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewMask {
    full_views: usize,
    measured: Vec<usize>,
}

impl ViewMask {
    /// Builds a mask from 1-based view indices. Rejects duplicates, indices
    /// outside `[1, full_views]`, and the empty set.
    pub fn new(indices: impl IntoIterator<Item = usize>, full_views: usize) -> Result<Self> {
        let mut measured: Vec<usize> = indices.into_iter().collect();
        if measured.is_empty() {
            return Err(Error::EmptyMask);
        }
        measured.sort_unstable();
        for pair in measured.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::InvalidArgument(format!(
                    "duplicate view index {} in mask",
                    pair[0]
                )));
            }
        }
        if measured[0] < 1 || *measured.last().unwrap() > full_views {
            return Err(Error::InvalidArgument(format!(
                "view indices must lie in [1, {full_views}]"
            )));
        }
        Ok(Self { full_views, measured })
    }

    /// Mask covering every view.
    pub fn full(full_views: usize) -> Self {
        Self { full_views, measured: (1..=full_views).collect() }
    }

    pub fn len(&self) -> usize {
        self.measured.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measured.is_empty()
    }

    pub fn full_views(&self) -> usize {
        self.full_views
    }

    pub fn is_full(&self) -> bool {
        self.measured.len() == self.full_views
    }

    /// Sorted 1-based view indices.
    pub fn indices(&self) -> &[usize] {
        &self.measured
    }

    /// 0-based sinogram rows.
    pub fn rows0(&self) -> impl Iterator<Item = usize> + '_ {
        self.measured.iter().map(|&i| i - 1)
    }

    pub fn contains(&self, view: usize) -> bool {
        self.measured.binary_search(&view).is_ok()
    }

    pub fn is_subset_of(&self, other: &ViewMask) -> bool {
        self.measured.iter().all(|v| other.contains(*v))
    }
}

/// Monotone mapping from diffusion step `t` to measured view count `k_t`.
///
/// `counts[0] == full_views`, `counts[total_steps] == min_views`, and the
/// sequence is strictly decreasing: every step removes at least one view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSchedule {
    total_steps: usize,
    full_views: usize,
    min_views: usize,
    counts: Vec<usize>,
}

impl StepSchedule {
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn full_views(&self) -> usize {
        self.full_views
    }

    pub fn min_views(&self) -> usize {
        self.min_views
    }

    /// View count at step `t`.
    pub fn count_at(&self, t: usize) -> usize {
        self.counts[t]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Sampling rate `α_t = k_t / v`.
    pub fn rate_at(&self, t: usize) -> f64 {
        self.counts[t] as f64 / self.full_views as f64
    }

    /// Step whose view count is nearest to `k`; ties resolve toward the
    /// larger step (fewer assumed measurements, more refinement iterations).
    pub fn nearest_step(&self, k: usize) -> usize {
        let mut best = 0usize;
        let mut best_dist = usize::MAX;
        for (t, &count) in self.counts.iter().enumerate() {
            let dist = count.abs_diff(k);
            if dist <= best_dist {
                best_dist = dist;
                best = t;
            }
        }
        best
    }

    /// Rebuilds a schedule from serialized counts, revalidating invariants.
    pub fn from_counts(full_views: usize, min_views: usize, counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidArgument("schedule needs at least two steps".into()));
        }
        if counts[0] != full_views || *counts.last().unwrap() != min_views {
            return Err(Error::InvalidArgument(
                "schedule endpoints must be full_views and min_views".into(),
            ));
        }
        if counts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("schedule counts must strictly decrease".into()));
        }
        Ok(Self { total_steps: counts.len() - 1, full_views, min_views, counts })
    }
}

/// Builds the exponential step↔count schedule
/// `k_t = round(v · (k_min/v)^(t/T))`, repaired to strict monotonicity.
///
/// The raw rounded curve can plateau; duplicates are repaired from `t = 1`
/// upward by decrementing each offending count just below its predecessor,
/// clamped so a strictly decreasing tail down to `k_min` at step `T` stays
/// feasible. Low rates change slowly and high rates quickly, so most of the
/// refinement budget is spent where restoration is hardest.
pub fn build_schedule(v: usize, total_steps: usize, k_min: usize) -> Result<StepSchedule> {
    if k_min < 1 || k_min >= v {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k_min < v, got k_min={k_min}, v={v}"
        )));
    }
    if total_steps < 1 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if total_steps > v - k_min {
        return Err(Error::InvalidArgument(format!(
            "cannot decrease strictly from {v} to {k_min} in {total_steps} steps"
        )));
    }
    let ratio = k_min as f64 / v as f64;
    let mut counts: Vec<usize> = (0..=total_steps)
        .map(|t| {
            let frac = t as f64 / total_steps as f64;
            (v as f64 * ratio.powf(frac)).round() as usize
        })
        .collect();
    counts[0] = v;
    counts[total_steps] = k_min;
    for t in 1..=total_steps {
        let cap = counts[t - 1] - 1;
        // Keep enough headroom for the remaining strict descent to k_min.
        let floor = k_min + (total_steps - t);
        counts[t] = counts[t].min(cap).max(floor);
    }
    debug_assert!(counts.windows(2).all(|w| w[1] < w[0]));
    debug_assert_eq!(counts[total_steps], k_min);
    Ok(StepSchedule { total_steps, full_views: v, min_views: k_min, counts })
}

/// Partition of `{1..v}` into `c` equispaced comb groups:
/// `g_s = {i : (i − s) mod c == 0}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    num_groups: usize,
    full_views: usize,
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn full_views(&self) -> usize {
        self.full_views
    }

    /// Group `s` (1-based), an equispaced comb of view indices.
    pub fn group(&self, s: usize) -> &[usize] {
        &self.groups[s - 1]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// Splits all view angles into `c` orderly, equally spaced groups. Group
/// sizes differ by at most one (`⌈v/c⌉` for the first `v mod c` groups).
pub fn partition_groups(v: usize, c: usize) -> Result<GroupPartition> {
    if c < 1 || c > v {
        return Err(Error::InvalidArgument(format!("need 1 <= c <= v, got c={c}, v={v}")));
    }
    let groups: Vec<Vec<usize>> = (1..=c)
        .map(|s| (s..=v).step_by(c).collect())
        .collect();
    Ok(GroupPartition { num_groups: c, full_views: v, groups })
}

/// Grouped-random selection of `k` views.
///
/// Whole groups are taken in order while the next group still fits within
/// `k`; the remainder is drawn uniformly without replacement from the next
/// group. The comb structure guarantees broad angular coverage, while the
/// random tail varies the exact views. Always returns exactly `k` views.
pub fn grouped_random_select(
    k: usize,
    part: &GroupPartition,
    rng: &mut impl Rng,
) -> Result<ViewMask> {
    let v = part.full_views();
    if k < 1 || k > v {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= v, got k={k}, v={v}")));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    for group in part.groups() {
        let remaining = k - selected.len();
        if remaining == 0 {
            break;
        }
        if group.len() <= remaining {
            selected.extend_from_slice(group);
        } else {
            let mut pool = group.clone();
            pool.shuffle(rng);
            selected.extend_from_slice(&pool[..remaining]);
            break;
        }
    }
    ViewMask::new(selected, v)
}

/// Deterministic equispaced selection: indices `round(1 + j·v/k)`,
/// deduplicated to the nearest unused index if rounding ever collides.
pub fn fixed_select(k: usize, v: usize) -> Result<ViewMask> {
    if k < 1 || k > v {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= v, got k={k}, v={v}")));
    }
    let mut used = vec![false; v + 1];
    let mut selected = Vec::with_capacity(k);
    for j in 0..k {
        let ideal = (1.0 + j as f64 * v as f64 / k as f64).round() as usize;
        let ideal = ideal.clamp(1, v);
        let mut chosen = None;
        for offset in 0..v {
            if ideal + offset <= v && !used[ideal + offset] {
                chosen = Some(ideal + offset);
                break;
            }
            if offset > 0 && ideal > offset && !used[ideal - offset] {
                chosen = Some(ideal - offset);
                break;
            }
        }
        let idx = chosen.expect("fewer than v views selected, an unused index exists");
        used[idx] = true;
        selected.push(idx);
    }
    ViewMask::new(selected, v)
}

/// Uniform selection of `k` views without replacement.
pub fn random_select(k: usize, v: usize, rng: &mut impl Rng) -> Result<ViewMask> {
    if k < 1 || k > v {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= v, got k={k}, v={v}")));
    }
    let mut all: Vec<usize> = (1..=v).collect();
    all.shuffle(rng);
    all.truncate(k);
    ViewMask::new(all, v)
}

/// Named view-selection strategy, used both for drawing training masks and
/// for building evaluation measurement sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum SelectionStrategy {
    /// Whole equispaced groups in order, random remainder within the next
    /// group.
    #[default]
    GroupedRandom,
    /// Uniform random views without replacement.
    Random,
    /// Deterministic equispaced views.
    Fixed,
}

impl SelectionStrategy {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "grouped-random" | "grouped" => Ok(Self::GroupedRandom),
            "random" => Ok(Self::Random),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::InvalidArgument(format!("unknown sampling strategy '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GroupedRandom => "grouped-random",
            Self::Random => "random",
            Self::Fixed => "fixed",
        }
    }

    /// Stable numeric id, independent of any listing order.
    pub fn stable_id(&self) -> u64 {
        match self {
            Self::Fixed => 0,
            Self::Random => 1,
            Self::GroupedRandom => 2,
        }
    }

    pub fn draw(&self, k: usize, part: &GroupPartition, rng: &mut impl Rng) -> Result<ViewMask> {
        match self {
            Self::GroupedRandom => grouped_random_select(k, part, rng),
            Self::Random => random_select(k, part.full_views(), rng),
            Self::Fixed => fixed_select(k, part.full_views()),
        }
    }
}

/// A nested sequence of view masks `M_T ⊂ M_{T−1} ⊂ … ⊂ M_0`, one per
/// diffusion step, realizing the degradation operator across steps.
#[derive(Debug, Clone)]
pub struct MaskTrajectory {
    schedule: StepSchedule,
    masks: Vec<ViewMask>,
}

impl MaskTrajectory {
    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    pub fn mask(&self, t: usize) -> Result<&ViewMask> {
        self.masks.get(t).ok_or(Error::StepOutOfRange {
            step: t,
            max: self.schedule.total_steps(),
        })
    }

    pub fn masks(&self) -> &[ViewMask] {
        &self.masks
    }

    #[cfg(test)]
    pub(crate) fn replace_masks_for_test(&mut self, masks: Vec<ViewMask>) {
        self.masks = masks;
    }

    /// Verifies `M_t ⊂ M_{t−1}` for every step.
    pub fn validate_nested(&self) -> Result<()> {
        for t in 1..self.masks.len() {
            if !self.masks[t].is_subset_of(&self.masks[t - 1]) {
                return Err(Error::NotNested(t, t - 1));
            }
        }
        Ok(())
    }
}

/// Builds a trajectory by drawing one grouped-random order of all `v` views
/// (whole groups in order, random order inside each group) and taking
/// `M_t` = first `k_t` views. Every prefix of such an order is a valid
/// grouped-random selection, and nesting holds by construction.
pub fn build_trajectory(
    sched: &StepSchedule,
    part: &GroupPartition,
    rng: &mut impl Rng,
) -> Result<MaskTrajectory> {
    if sched.full_views() != part.full_views() {
        return Err(Error::DimensionMismatch(format!(
            "schedule covers {} views, partition {}",
            sched.full_views(),
            part.full_views()
        )));
    }
    let order = grouped_order(part, rng);
    let masks = masks_from_order(&order, sched, |t| sched.count_at(t))?;
    Ok(MaskTrajectory { schedule: sched.clone(), masks })
}

fn grouped_order(part: &GroupPartition, rng: &mut impl Rng) -> Vec<usize> {
    let mut order = Vec::with_capacity(part.full_views());
    for group in part.groups() {
        let mut g = group.clone();
        g.shuffle(rng);
        order.extend(g);
    }
    order
}

fn masks_from_order(
    order: &[usize],
    sched: &StepSchedule,
    size_at: impl Fn(usize) -> usize,
) -> Result<Vec<ViewMask>> {
    (0..=sched.total_steps())
        .map(|t| ViewMask::new(order[..size_at(t)].iter().copied(), sched.full_views()))
        .collect()
}

/// Aligns a trajectory with an actual measurement set.
///
/// Picks the start step `t*` whose scheduled count is nearest `|measured|`
/// (ties toward larger `t`, which never treats unmeasured views as measured),
/// forces `M_{t*}` to equal the measured mask exactly, grows masks below `t*`
/// by appending unmeasured views in grouped-random order, and shrinks masks
/// above `t*` to grouped-random-ordered prefixes of the measured set.
pub fn trajectory_from_measured(
    measured: &ViewMask,
    sched: &StepSchedule,
    part: &GroupPartition,
    rng: &mut impl Rng,
) -> Result<(usize, MaskTrajectory)> {
    if measured.is_empty() {
        return Err(Error::EmptyMask);
    }
    if measured.full_views() != sched.full_views() || sched.full_views() != part.full_views() {
        return Err(Error::DimensionMismatch(format!(
            "measured mask covers {} views, schedule {}, partition {}",
            measured.full_views(),
            sched.full_views(),
            part.full_views()
        )));
    }
    let m = measured.len();
    let t_star = sched.nearest_step(m);

    // One grouped-random order that lists measured views first, then the
    // complement, both in within-group random order.
    let full_order = grouped_order(part, rng);
    let mut order: Vec<usize> = full_order.iter().copied().filter(|i| measured.contains(*i)).collect();
    order.extend(full_order.iter().copied().filter(|i| !measured.contains(*i)));

    let masks = masks_from_order(&order, sched, |t| {
        use std::cmp::Ordering::*;
        match t.cmp(&t_star) {
            Equal => m,
            Greater => sched.count_at(t).min(m),
            Less => sched.count_at(t).max(m),
        }
    })?;
    let traj = MaskTrajectory { schedule: sched.clone(), masks };
    debug_assert!(traj.validate_nested().is_ok());
    Ok((t_star, traj))
}

/// Degradation operator `D(y, t)`: zeroes all rows outside `M_t` and attaches
/// that mask. `D(y, 0)` is the identity when `M_0` covers every view.
pub fn degrade(sino: &Sinogram, traj: &MaskTrajectory, t: usize) -> Result<Sinogram> {
    let mask = traj.mask(t)?;
    if sino.num_views() != mask.full_views() {
        return Err(Error::DimensionMismatch(format!(
            "sinogram has {} views, trajectory covers {}",
            sino.num_views(),
            mask.full_views()
        )));
    }
    Ok(sino.masked(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = build_schedule(488, 100, 23).unwrap();
        assert_eq!(s.count_at(0), 488);
        assert_eq!(s.count_at(100), 23);
        // 488·(23/488)^0.5 = 105.94…, rounded to 106.
        assert_eq!(s.count_at(50), 106);
    }

    #[test]
    fn schedule_strictly_decreasing_with_tight_budget() {
        let s = build_schedule(10, 9, 1).unwrap();
        assert_eq!(s.counts(), &[10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);
        for w in s.counts().windows(2) {
            assert!(w[1] < w[0], "each step must drop at least one view");
        }
    }

    #[test]
    fn schedule_rejects_invalid_arguments() {
        assert!(build_schedule(10, 10, 0).is_err());
        assert!(build_schedule(10, 1, 10).is_err());
        assert!(build_schedule(10, 0, 5).is_err());
        // More steps than removable views.
        assert!(build_schedule(10, 10, 1).is_err());
    }

    #[test]
    fn schedule_is_roughly_geometric_before_repair() {
        // The unrepaired formula tracks the analytic geometric curve within
        // one view; the repair only adjusts plateaus and the strict tail.
        let (v, steps, kmin) = (488usize, 100usize, 23usize);
        let ratio = (kmin as f64 / v as f64).powf(1.0 / steps as f64);
        for t in 0..=steps {
            let raw = (v as f64 * (kmin as f64 / v as f64).powf(t as f64 / steps as f64)).round();
            let analytic = v as f64 * ratio.powi(t as i32);
            assert!(
                (raw - analytic).abs() <= 1.0 + 1e-9,
                "step {t}: raw {raw} vs analytic {analytic:.2}"
            );
        }
        // Where no repair is needed the schedule equals the raw formula.
        let s = build_schedule(v, steps, kmin).unwrap();
        assert_eq!(s.count_at(50), 106);
        assert_eq!(s.count_at(25), 227);
    }

    #[test]
    fn partition_combs() {
        let p = partition_groups(488, 8).unwrap();
        assert_eq!(p.num_groups(), 8);
        for s in 1..=8 {
            assert_eq!(p.group(s).len(), 61);
        }
        let expected: Vec<usize> = (0..61).map(|j| 1 + 8 * j).collect();
        assert_eq!(p.group(1), expected.as_slice());
        assert_eq!(*p.group(1).last().unwrap(), 481);
    }

    #[test]
    fn partition_single_group() {
        let p = partition_groups(5, 1).unwrap();
        assert_eq!(p.group(1), &[1, 2, 3, 4, 5]);
    }

    #[test]
    fn partition_covers_disjointly() {
        for (v, c) in [(488usize, 8usize), (180, 8), (10, 3), (7, 7)] {
            let p = partition_groups(v, c).unwrap();
            let mut seen = vec![false; v + 1];
            for g in p.groups() {
                for &i in g {
                    assert!(!seen[i], "view {i} appears twice");
                    seen[i] = true;
                }
            }
            assert!(seen[1..].iter().all(|&s| s), "partition must cover 1..={v}");
            let sizes: Vec<usize> = p.groups().iter().map(|g| g.len()).collect();
            let (lo, hi) = (v / c, v.div_ceil(c));
            assert!(sizes.iter().all(|&s| s == lo || s == hi));
        }
    }

    #[test]
    fn partition_range_errors() {
        assert!(partition_groups(10, 0).is_err());
        assert!(partition_groups(10, 11).is_err());
    }

    #[test]
    fn grouped_select_whole_groups_is_deterministic() {
        let p = partition_groups(488, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask = grouped_random_select(122, &p, &mut rng).unwrap();
        let mut expected: Vec<usize> = p.group(1).to_vec();
        expected.extend_from_slice(p.group(2));
        expected.sort_unstable();
        assert_eq!(mask.indices(), expected.as_slice());
    }

    #[test]
    fn grouped_select_partial_group() {
        let p = partition_groups(488, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask = grouped_random_select(100, &p, &mut rng).unwrap();
        assert_eq!(mask.len(), 100);
        // All of g1 plus 39 members of g2.
        for &i in p.group(1) {
            assert!(mask.contains(i));
        }
        let in_g2 = p.group(2).iter().filter(|i| mask.contains(**i)).count();
        assert_eq!(in_g2, 39);
        for &i in mask.indices() {
            assert!(p.group(1).contains(&i) || p.group(2).contains(&i));
        }
    }

    #[test]
    fn grouped_select_full_and_errors() {
        let p = partition_groups(488, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = grouped_random_select(488, &p, &mut rng).unwrap();
        assert!(mask.is_full());
        assert!(grouped_random_select(0, &p, &mut rng).is_err());
        assert!(grouped_random_select(489, &p, &mut rng).is_err());
    }

    #[test]
    fn grouped_select_exact_size_on_uneven_groups() {
        // 180 = 8·22 + 4, so group sizes are 23 and 22; the selection must
        // still return exactly k views.
        let p = partition_groups(180, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [1, 22, 23, 45, 46, 90, 179, 180] {
            let mask = grouped_random_select(k, &p, &mut rng).unwrap();
            assert_eq!(mask.len(), k);
        }
    }

    #[test]
    fn fixed_select_examples() {
        assert!(fixed_select(8, 8).unwrap().is_full());
        assert_eq!(fixed_select(4, 8).unwrap().indices(), &[1, 3, 5, 7]);
        assert_eq!(fixed_select(1, 488).unwrap().indices(), &[1]);
        assert!(fixed_select(0, 8).is_err());
        assert!(fixed_select(9, 8).is_err());
    }

    #[test]
    fn fixed_select_gap_bound() {
        for (k, v) in [(23usize, 488usize), (60, 488), (9, 180), (7, 100)] {
            let mask = fixed_select(k, v).unwrap();
            assert_eq!(mask.len(), k);
            let idx = mask.indices();
            let mut max_gap = v - idx[idx.len() - 1] + idx[0]; // circular wrap
            for w in idx.windows(2) {
                max_gap = max_gap.max(w[1] - w[0]);
            }
            assert!(
                max_gap <= v.div_ceil(k) + 1,
                "gap {max_gap} exceeds bound for k={k}, v={v}"
            );
        }
    }

    #[test]
    fn random_select_is_seed_deterministic() {
        let a = random_select(60, 488, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = random_select(60, 488, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = random_select(60, 488, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(random_select(488, 488, &mut ChaCha8Rng::seed_from_u64(7)).unwrap().is_full());
    }

    #[test]
    fn trajectory_nested_by_construction() {
        let sched = build_schedule(180, 50, 9).unwrap();
        let part = partition_groups(180, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let traj = build_trajectory(&sched, &part, &mut rng).unwrap();
        assert!(traj.mask(0).unwrap().is_full());
        for t in 0..=50 {
            assert_eq!(traj.mask(t).unwrap().len(), sched.count_at(t));
        }
        traj.validate_nested().unwrap();
    }

    #[test]
    fn trajectory_from_measured_full_mask() {
        let sched = build_schedule(180, 50, 9).unwrap();
        let part = partition_groups(180, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let measured = ViewMask::full(180);
        let (t_star, traj) = trajectory_from_measured(&measured, &sched, &part, &mut rng).unwrap();
        assert_eq!(t_star, 0);
        assert_eq!(traj.mask(0).unwrap(), &measured);
    }

    #[test]
    fn trajectory_from_measured_matches_count() {
        let sched = build_schedule(488, 100, 23).unwrap();
        let part = partition_groups(488, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let measured = fixed_select(60, 488).unwrap();
        let (t_star, traj) = trajectory_from_measured(&measured, &sched, &part, &mut rng).unwrap();
        // t* must be the step whose count is nearest 60.
        let mut best = usize::MAX;
        for &c in sched.counts() {
            best = best.min(c.abs_diff(60));
        }
        assert_eq!(sched.count_at(t_star).abs_diff(60), best);
        assert_eq!(traj.mask(t_star).unwrap(), &measured);
        traj.validate_nested().unwrap();
        // Below t*, masks grow and still contain every measured view.
        for t in 0..t_star {
            assert!(measured.is_subset_of(traj.mask(t).unwrap()));
        }
    }

    #[test]
    fn trajectory_from_measured_min_views() {
        let sched = build_schedule(488, 100, 23).unwrap();
        let part = partition_groups(488, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let measured = fixed_select(23, 488).unwrap();
        let (t_star, _) = trajectory_from_measured(&measured, &sched, &part, &mut rng).unwrap();
        assert_eq!(t_star, 100);
    }

    #[test]
    fn degrade_boundary_and_idempotence() {
        let sched = build_schedule(60, 20, 5).unwrap();
        let part = partition_groups(60, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let traj = build_trajectory(&sched, &part, &mut rng).unwrap();

        let vals: Vec<f64> = (0..60 * 16).map(|i| (i % 37) as f64 * 0.1 + 1.0).collect();
        let sino = Sinogram::from_values(60, 16, vals).unwrap();

        let d0 = degrade(&sino, &traj, 0).unwrap();
        assert_eq!(d0.data(), sino.data());

        let t = 12;
        let dt = degrade(&sino, &traj, t).unwrap();
        let mask = traj.mask(t).unwrap();
        for row in 0..60 {
            if mask.contains(row + 1) {
                assert_eq!(dt.row(row), sino.row(row));
            } else {
                assert!(dt.row(row).iter().all(|&x| x == 0.0));
            }
        }

        // Masking twice at nested steps equals masking at the larger step.
        let (a, b) = (7, 15);
        let ab = degrade(&degrade(&sino, &traj, a).unwrap(), &traj, b).unwrap();
        let ba = degrade(&degrade(&sino, &traj, b).unwrap(), &traj, a).unwrap();
        let hi = degrade(&sino, &traj, a.max(b)).unwrap();
        assert_eq!(ab.data(), hi.data());
        assert_eq!(ba.data(), hi.data());

        assert!(degrade(&sino, &traj, 21).is_err());
    }

    #[test]
    fn grouped_coverage_gap_after_whole_groups() {
        // After m whole comb groups the largest angular gap is at most c.
        let p = partition_groups(488, 8).unwrap();
        for m in 1..=8usize {
            let mut idx: Vec<usize> = (1..=m).flat_map(|s| p.group(s).to_vec()).collect();
            idx.sort_unstable();
            let mut max_gap = 488 - idx[idx.len() - 1] + idx[0];
            for w in idx.windows(2) {
                max_gap = max_gap.max(w[1] - w[0]);
            }
            assert!(max_gap <= 8, "gap {max_gap} after {m} whole groups");
        }
    }

    proptest! {
        #[test]
        fn prop_schedule_monotone(v in 12usize..300, steps in 1usize..40, kmin in 1usize..10) {
            prop_assume!(kmin < v && steps <= v - kmin);
            let s = build_schedule(v, steps, kmin).unwrap();
            prop_assert_eq!(s.count_at(0), v);
            prop_assert_eq!(s.count_at(steps), kmin);
            for w in s.counts().windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }

        #[test]
        fn prop_grouped_select_size_and_reproducibility(
            v in 8usize..200, c in 1usize..12, k in 1usize..200, seed in 0u64..1000,
        ) {
            prop_assume!(c <= v && k <= v);
            let p = partition_groups(v, c).unwrap();
            let a = grouped_random_select(k, &p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = grouped_random_select(k, &p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a.len(), k);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn prop_trajectory_nesting(v in 12usize..120, c in 1usize..9, seed in 0u64..1000) {
            prop_assume!(c <= v);
            let kmin = 2usize.min(v - 1);
            let steps = ((v - kmin) / 2).max(1);
            let sched = build_schedule(v, steps, kmin).unwrap();
            let part = partition_groups(v, c).unwrap();
            let traj =
                build_trajectory(&sched, &part, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(traj.validate_nested().is_ok());
        }
    }
}
