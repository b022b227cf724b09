//! Experiment harness: phantoms, quality metrics, and protocol drivers.

pub mod metrics;
pub mod phantom;
pub mod sweep;

pub use metrics::{psnr, ssim};
pub use phantom::{random_phantom, shepp_logan, PhantomKind, PhantomSpec};
pub use sweep::{
    disturbance_eval, run_sweep, DisturbanceConfig, MetricReport, MetricRow, SummaryRow,
    SweepConfig, DESK_SCALE_COUNTS, FULL_SCALE_COUNTS,
};
