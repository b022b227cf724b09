//! Batch command-line interface.
//!
//! Subcommands: `phantom`, `project`, `train`, `reconstruct`, `sweep`.
//! Precedence for every setting is CLI flag > `--config` JSON file >
//! built-in defaults (the full-scale scanner constants). Every command
//! writes a manifest next to its outputs recording the resolved
//! configuration, so a run can be replayed exactly.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or numeric failure.
//! `CTSDM_THREADS` caps internal parallelism.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::diffusion::{reconstruct, ReconstructionRequest};
use crate::error::{Error, Result};
use crate::geometry::{forward_project, FanBeamGeometry, FilterKind, Image};
use crate::harness::phantom::{random_phantom, PhantomKind, PhantomSpec};
use crate::harness::sweep::{run_sweep, SweepConfig, FULL_SCALE_COUNTS};
use crate::io;
use crate::restorer::{
    train, InterpRestorer, OracleRestorer, OptimizerKind, RestoreOperator, TrainConfig,
};
use crate::sampling::{build_schedule, partition_groups, SelectionStrategy, StepSchedule};

#[derive(Parser)]
#[command(
    name = "ctsdm",
    version,
    about = "Sparse-view CT reconstruction with a view-sampling diffusion loop"
)]
struct Cli {
    /// JSON config file; CLI flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom images.
    Phantom(PhantomArgs),
    /// Forward-project images into (optionally undersampled) sinograms.
    Project(ProjectArgs),
    /// Train the restorer and refiner jointly.
    Train(TrainArgs),
    /// Reconstruct an image from an undersampled sinogram.
    Reconstruct(ReconstructArgs),
    /// Evaluate a model across sampling strategies and view counts.
    Sweep(SweepArgs),
}

/// Optional config-file sections mirroring the flags.
#[derive(Debug, Clone, Deserialize, Default)]
struct FileConfig {
    geometry: Option<io::GeometrySpec>,
    #[serde(default)]
    total_steps: Option<usize>,
    #[serde(default)]
    min_views: Option<usize>,
    #[serde(default)]
    groups: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

/// Geometry flags shared by the commands that touch projections.
#[derive(Args, Debug, Clone)]
struct GeometryArgs {
    /// Number of projection views (full sampling).
    #[arg(long = "full-views")]
    views: Option<usize>,
    /// Number of detector bins.
    #[arg(long)]
    detectors: Option<usize>,
    /// Source-to-detector distance in mm.
    #[arg(long)]
    sdd: Option<f64>,
    /// Source-to-rotation-center distance in mm.
    #[arg(long)]
    sod: Option<f64>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Pixel spacing in mm.
    #[arg(long)]
    pixel: Option<f64>,
    /// Shortcut for the small CPU-friendly setup (180 views, 128 detectors,
    /// 64 px).
    #[arg(long, default_value_t = false)]
    desk_scale: bool,
}

impl GeometryArgs {
    fn resolve(&self, file: &FileConfig, image_size: Option<usize>) -> Result<FanBeamGeometry> {
        let base = if self.desk_scale {
            io::GeometrySpec::of(&FanBeamGeometry::desk_scale())
        } else if let Some(spec) = &file.geometry {
            spec.clone()
        } else {
            io::GeometrySpec::of(&FanBeamGeometry::full_scale())
        };
        let spec = io::GeometrySpec {
            num_views: self.views.unwrap_or(base.num_views),
            num_detectors: self.detectors.unwrap_or(base.num_detectors),
            source_to_detector_mm: self.sdd.unwrap_or(base.source_to_detector_mm),
            source_to_center_mm: self.sod.unwrap_or(base.source_to_center_mm),
            image_size_px: self.size.or(image_size).unwrap_or(base.image_size_px),
            pixel_spacing_mm: self.pixel.unwrap_or(base.pixel_spacing_mm),
        };
        spec.build()
    }
}

/// Schedule flags shared by the diffusion-facing commands.
#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    /// Total diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
    /// View count at the final step.
    #[arg(long)]
    k_min: Option<usize>,
    /// Number of equispaced view groups.
    #[arg(long)]
    groups: Option<usize>,
}

impl ScheduleArgs {
    fn resolve(&self, file: &FileConfig, views: usize) -> Result<(StepSchedule, usize)> {
        // Defaults follow the scanner scale: the full-scale setup runs 100
        // steps down to 23 views; the desk setup 50 steps down to 9.
        let (def_steps, def_kmin) = if views == 180 { (50, 9) } else { (100, 23) };
        let steps = self.steps.or(file.total_steps).unwrap_or(def_steps);
        let k_min = self.k_min.or(file.min_views).unwrap_or(def_kmin);
        let groups = self.groups.or(file.groups).unwrap_or(8);
        let sched = build_schedule(views, steps, k_min)?;
        Ok((sched, groups))
    }
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// Phantom kind: shepp-logan or random.
    #[arg(long, default_value = "shepp-logan")]
    kind: String,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// How many phantoms to generate (random kind varies per index).
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write 8-bit PGM previews.
    #[arg(long, default_value_t = false)]
    pgm: bool,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    /// Input image tensor (.ctsd).
    input: PathBuf,
    /// Output sinogram path (.ctsd).
    #[arg(long)]
    out: PathBuf,
    /// Keep only this many views (full projection when omitted).
    #[arg(long = "views")]
    views_kept: Option<usize>,
    /// Selection strategy for the kept views.
    #[arg(long, default_value = "fixed")]
    strategy: String,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of training image tensors (*.ctsd).
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path (.ctsm).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the image-domain loss term.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss norm: l2 or l1.
    #[arg(long)]
    norm: Option<String>,
    /// Optimizer: adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Training mask strategy: grouped-random, random, or fixed.
    #[arg(long)]
    sampling: Option<String>,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Input sinogram tensor (.ctsd) with mask sidecar.
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Model checkpoint (.ctsm); alternative to --restorer.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Analytic restorer: oracle (needs --truth) or interp.
    #[arg(long)]
    restorer: Option<String>,
    /// Ground-truth sinogram for the oracle restorer.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reconstruction filter: ram-lak or hann.
    #[arg(long, default_value = "ram-lak")]
    filter: String,
    /// Also write 8-bit PGM previews.
    #[arg(long, default_value_t = false)]
    pgm: bool,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Model checkpoint (.ctsm); alternative to --restorer interp.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Analytic restorer to evaluate instead of a model: interp.
    #[arg(long)]
    restorer: Option<String>,
    /// Output directory for report CSVs.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated measured view counts.
    #[arg(long)]
    counts: Option<String>,
    /// Comma-separated strategies.
    #[arg(long, default_value = "grouped-random")]
    strategies: String,
    /// Held-out phantoms per cell.
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Filter: ram-lak or hann.
    #[arg(long, default_value = "ram-lak")]
    filter: String,
    /// Evaluate the full-scale scanner with its count ladder.
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    configure_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are successful exits; real parse errors are
            // usage errors.
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let file = match load_file_config(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return 2;
        }
    };
    let outcome = match &cli.command {
        Command::Phantom(args) => cmd_phantom(args, &file),
        Command::Project(args) => cmd_project(args, &file),
        Command::Train(args) => cmd_train(args, &file),
        Command::Reconstruct(args) => cmd_reconstruct(args, &file),
        Command::Sweep(args) => cmd_sweep(args, &file),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidArgument(_)
                | Error::EmptyMask
                | Error::DimensionMismatch(_)
                | Error::StepOutOfRange { .. } => 1,
                _ => 2,
            }
        }
    }
}

fn configure_threads() {
    if let Ok(value) = std::env::var("CTSDM_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                // Ignore failure: the pool may already be initialized.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn cmd_phantom(args: &PhantomArgs, file: &FileConfig) -> Result<()> {
    let started = std::time::Instant::now();
    if args.size == 0 {
        return Err(Error::InvalidArgument("phantom size must be positive".into()));
    }
    if args.count == 0 {
        return Err(Error::InvalidArgument("phantom count must be positive".into()));
    }
    let kind = PhantomKind::parse(&args.kind)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    ensure_dir(&args.out)?;

    let mut manifest = io::RunManifest::new(
        "phantom",
        serde_json::json!({
            "kind": kind.name(), "size": args.size, "count": args.count, "seed": seed,
        }),
    );
    manifest.seed = Some(seed);
    for i in 0..args.count {
        let spec = PhantomSpec {
            kind,
            size_px: args.size,
            seed: seed.wrapping_add(i as u64),
            ..PhantomSpec::random(args.size, 0)
        };
        let img = random_phantom(&spec)?;
        let path = args.out.join(format!("phantom_{i:03}.ctsd"));
        io::save_image(&path, &img, Some(spec.seed))?;
        if args.pgm {
            io::write_pgm(&path.with_extension("pgm"), &img)?;
        }
        manifest.outputs.push(path.display().to_string());
    }
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join("phantom.manifest.json"))?;
    println!("wrote {} phantom(s) to {}", args.count, args.out.display());
    Ok(())
}

fn cmd_project(args: &ProjectArgs, file: &FileConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let image = io::load_image(&args.input)?;
    let geom = args.geometry.resolve(file, Some(image.size()))?;
    let strategy = SelectionStrategy::parse(&args.strategy)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let mask = match args.views_kept {
        None => None,
        Some(k) => {
            let part = partition_groups(geom.num_views, 8)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            Some(strategy.draw(k, &part, &mut rng)?)
        }
    };
    let sino = forward_project(&image, &geom, mask.as_ref())?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    io::save_sinogram(&args.out, &sino, &geom, Some(seed))?;

    let mut manifest = io::RunManifest::new(
        "project",
        serde_json::json!({
            "geometry": io::GeometrySpec::of(&geom),
            "views_kept": args.views_kept,
            "strategy": strategy.name(),
            "seed": seed,
        }),
    );
    manifest.seed = Some(seed);
    manifest.inputs.push(args.input.display().to_string());
    manifest.outputs.push(args.out.display().to_string());
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))?;
    println!(
        "projected {} -> {} ({} views{})",
        args.input.display(),
        args.out.display(),
        geom.num_views,
        match args.views_kept {
            Some(k) => format!(", {k} kept"),
            None => String::new(),
        }
    );
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().unwrap_or_default().to_string_lossy().to_string();
    output.with_file_name(format!("{stem}.manifest.json"))
}

fn load_training_images(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ctsd"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .ctsd images found in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| io::load_image(p)).collect()
}

fn cmd_train(args: &TrainArgs, file: &FileConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let dataset = load_training_images(&args.data)?;
    let geom = args.geometry.resolve(file, Some(dataset[0].size()))?;
    let (sched, groups) = args.schedule.resolve(file, geom.num_views)?;
    let part = partition_groups(geom.num_views, groups)?;

    let base = file.train.clone().unwrap_or_default();
    let cfg = TrainConfig {
        lambda_weight: args.lambda.unwrap_or(base.lambda_weight),
        learning_rate: args.lr.unwrap_or(base.learning_rate),
        epochs: args.epochs.unwrap_or(base.epochs),
        batch_size: args.batch.unwrap_or(base.batch_size),
        seed: args.seed.or(file.seed).unwrap_or(base.seed),
        loss_norm: match &args.norm {
            Some(name) => crate::restorer::LossNorm::parse(name)?,
            None => base.loss_norm,
        },
        optimizer: match &args.optimizer {
            Some(name) => OptimizerKind::parse(name)?,
            None => base.optimizer,
        },
        sampling: match &args.sampling {
            Some(name) => SelectionStrategy::parse(name)?,
            None => base.sampling,
        },
        ..base
    };

    let (restorer, refiner, history) = train(&dataset, &geom, &sched, &part, &cfg)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    io::save_models(&args.out, &restorer, &refiner)?;
    let history_path = args.out.with_extension("history.csv");
    std::fs::write(&history_path, io::history_csv(&history))?;

    let mut manifest = io::RunManifest::new(
        "train",
        serde_json::json!({
            "geometry": io::GeometrySpec::of(&geom),
            "schedule": io::ScheduleFile::of(&sched, Some(cfg.seed)),
            "groups": groups,
            "train": cfg,
            "dataset_size": dataset.len(),
        }),
    );
    manifest.seed = Some(cfg.seed);
    manifest.inputs.push(args.data.display().to_string());
    manifest.outputs.push(args.out.display().to_string());
    manifest.outputs.push(history_path.display().to_string());
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))?;

    let last = history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} images: L_s={:.4} L_i={:.6} L={:.4} ({} + {} params)",
        cfg.epochs,
        dataset.len(),
        last.sinogram_loss,
        last.image_loss,
        last.total_loss,
        restorer.parameter_count(),
        refiner.parameter_count(),
    );
    Ok(())
}

fn cmd_reconstruct(args: &ReconstructArgs, file: &FileConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let (sino, sidecar) = io::load_sinogram(&args.input)?;
    if sino.mask().is_none() {
        return Err(Error::InvalidArgument(
            "input sinogram has no mask sidecar; reconstruct needs the measured views".into(),
        ));
    }
    let geom = match &sidecar.geometry {
        Some(spec) => spec.build()?,
        None => {
            return Err(Error::InvalidArgument(
                "input sidecar carries no geometry".into(),
            ))
        }
    };
    let (sched, groups) = args.schedule.resolve(file, geom.num_views)?;
    let part = partition_groups(geom.num_views, groups)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let filter = FilterKind::parse(&args.filter)?;

    // Restorer selection: checkpoint, oracle fixture, or interpolation.
    let mut loaded = None;
    let oracle;
    let interp = InterpRestorer;
    let restorer: &dyn RestoreOperator = match (&args.model, args.restorer.as_deref()) {
        (Some(path), None) => {
            let (r, f) = io::load_models(path)?;
            loaded = Some((r, f));
            &loaded.as_ref().unwrap().0
        }
        (None, Some("oracle")) => {
            let truth_path = args.truth.as_ref().ok_or_else(|| {
                Error::InvalidArgument("--restorer oracle needs --truth".into())
            })?;
            let (truth, _) = io::load_sinogram(truth_path)?;
            oracle = OracleRestorer::new(truth);
            &oracle
        }
        (None, Some("interp")) => &interp,
        (None, Some(other)) => {
            return Err(Error::InvalidArgument(format!(
                "unknown restorer '{other}' (expected 'oracle' or 'interp')"
            )))
        }
        (None, None) => {
            return Err(Error::InvalidArgument("pass --model or --restorer".into()))
        }
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "--model and --restorer are mutually exclusive".into(),
            ))
        }
    };
    let refiner = loaded.as_ref().map(|(_, f)| f);

    let req = ReconstructionRequest {
        measurements: sino,
        geometry: geom.clone(),
        schedule: sched.clone(),
        partition: part,
        seed,
        filter,
    };
    let res = reconstruct(&req, restorer, refiner)?;

    ensure_dir(&args.out)?;
    let est_path = args.out.join("sinogram_estimate.ctsd");
    io::save_sinogram(&est_path, &res.sinogram_estimate, &geom, Some(seed))?;
    let raw_path = args.out.join("image_raw.ctsd");
    io::save_image(&raw_path, &res.image_raw, Some(seed))?;
    let refined_path = args.out.join("image_refined.ctsd");
    io::save_image(&refined_path, &res.image_refined, Some(seed))?;
    if args.pgm {
        io::write_pgm(&args.out.join("image_raw.pgm"), &res.image_raw)?;
        io::write_pgm(&args.out.join("image_refined.pgm"), &res.image_refined)?;
    }

    let mut manifest = io::RunManifest::new(
        "reconstruct",
        serde_json::json!({
            "geometry": io::GeometrySpec::of(&geom),
            "schedule": io::ScheduleFile::of(&sched, Some(seed)),
            "filter": filter.name(),
            "start_step": res.start_step,
            "data_consistency_residual": res.data_consistency_residual,
        }),
    );
    manifest.seed = Some(seed);
    manifest.inputs.push(args.input.display().to_string());
    for p in [&est_path, &raw_path, &refined_path] {
        manifest.outputs.push(p.display().to_string());
    }
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join("reconstruct.manifest.json"))?;

    println!(
        "reconstructed from step t*={} ({} measured views); data-consistency residual {:.3e}",
        res.start_step,
        req.measurements.mask().map(|m| m.len()).unwrap_or(0),
        res.data_consistency_residual
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs, file: &FileConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let geom = if args.paper_scale {
        FanBeamGeometry::full_scale()
    } else {
        args.geometry.resolve(file, None)?
    };
    let (sched, groups) = args.schedule.resolve(file, geom.num_views)?;
    let part = partition_groups(geom.num_views, groups)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let filter = FilterKind::parse(&args.filter)?;

    let counts: Vec<usize> = match (&args.counts, args.paper_scale) {
        (Some(list), _) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad count '{s}'")))
            })
            .collect::<Result<_>>()?,
        (None, true) => FULL_SCALE_COUNTS.to_vec(),
        (None, false) => crate::harness::sweep::DESK_SCALE_COUNTS.to_vec(),
    };
    let strategies: Vec<SelectionStrategy> = args
        .strategies
        .split(',')
        .map(|s| SelectionStrategy::parse(s.trim()))
        .collect::<Result<_>>()?;

    let mut loaded = None;
    let interp = InterpRestorer;
    let restorer: &dyn RestoreOperator = match (&args.model, args.restorer.as_deref()) {
        (Some(path), None) => {
            let (r, f) = io::load_models(path)?;
            loaded = Some((r, f));
            &loaded.as_ref().unwrap().0
        }
        (None, Some("interp")) => &interp,
        (None, Some(other)) => {
            return Err(Error::InvalidArgument(format!(
                "unknown restorer '{other}' (expected 'interp')"
            )))
        }
        (None, None) => {
            return Err(Error::InvalidArgument("pass --model or --restorer interp".into()))
        }
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "--model and --restorer are mutually exclusive".into(),
            ))
        }
    };
    let refiner = loaded.as_ref().map(|(_, f)| f);

    let cfg = SweepConfig {
        view_counts: counts.clone(),
        strategies: strategies.clone(),
        num_test_images: args.images,
        seed,
        filter,
    };
    let report = run_sweep(&cfg, &geom, &sched, &part, restorer, refiner)?;

    ensure_dir(&args.out)?;
    let rows_path = args.out.join("sweep_rows.csv");
    std::fs::write(&rows_path, report.to_csv())?;
    let summary_path = args.out.join("sweep_summary.csv");
    std::fs::write(&summary_path, report.summary_csv())?;

    let mut manifest = io::RunManifest::new(
        "sweep",
        serde_json::json!({
            "geometry": io::GeometrySpec::of(&geom),
            "schedule": io::ScheduleFile::of(&sched, Some(seed)),
            "groups": groups,
            "counts": counts,
            "strategies": strategies.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "images": args.images,
            "filter": filter.name(),
        }),
    );
    manifest.seed = Some(seed);
    manifest.outputs.push(rows_path.display().to_string());
    manifest.outputs.push(summary_path.display().to_string());
    manifest.wall_secs = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join("sweep.manifest.json"))?;

    println!("{}", report.summary_csv().trim_end());
    Ok(())
}
