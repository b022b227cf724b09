//! Sparse-view CT reconstruction toolkit.
//!
//! The pipeline treats view subsampling itself as the degradation process of
//! a diffusion model over sinograms: the forward process removes projection
//! views step by step along a schedule, and the reverse loop walks back from
//! whatever sampling rate was actually measured, repeatedly estimating the
//! full-view sinogram and re-degrading it, so one trained restoration
//! operator serves every sampling rate. Reconstructed sinograms go through
//! filtered back-projection and a light image-domain refiner.
//!
//! Module map:
//! - [`geometry`] — fan-beam forward projection, exact adjoint, FBP
//! - [`sampling`] — schedules, grouped view selection, nested mask
//!   trajectories, the degradation operator
//! - [`nn`] — minimal dense/conv layers with hand-written backprop
//! - [`restorer`] — sinogram restorer, image refiner, joint training
//! - [`diffusion`] — the reverse sampling loop and end-to-end reconstruction
//! - [`harness`] — phantoms, PSNR/SSIM, sweep and robustness experiments
//! - [`io`] — tensor/checkpoint file formats, sidecars, reports
//!
//! See the crate `examples/` directory for one runnable program per
//! capability, or the `ctsdm` binary for batch use.

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod nn;
pub mod restorer;
pub mod sampling;

pub use error::{Error, Result};
