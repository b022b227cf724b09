// Calibration probe for desk-scale training: timing, convergence, and the
// rate-adaptivity margin over zero-filled FBP.

use ctsdm::geometry::{FanBeamGeometry, FilterKind};
use ctsdm::harness::phantom::{random_phantom, PhantomSpec};
use ctsdm::harness::sweep::{run_sweep, SweepConfig, DESK_SCALE_COUNTS};
use ctsdm::restorer::{train, TrainConfig};
use ctsdm::sampling::{build_schedule, partition_groups, SelectionStrategy};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let n_train: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let channels: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);

    let geom = FanBeamGeometry::desk_scale();
    let sched = build_schedule(180, 50, 9).unwrap();
    let part = partition_groups(180, 8).unwrap();
    let dataset: Vec<_> = (0..n_train)
        .map(|s| random_phantom(&PhantomSpec::random(64, 10_000 + s as u64)).unwrap())
        .collect();

    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let norm = if std::env::var("L1").is_ok() {
        ctsdm::restorer::LossNorm::L1
    } else {
        ctsdm::restorer::LossNorm::L2
    };
    let decay: f64 = std::env::var("DECAY").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let cfg = TrainConfig {
        loss_norm: norm,
        lr_decay: decay,
        epochs,
        seed: 1,
        learning_rate: lr,
        restorer_channels: [channels, channels * 2, channels * 4],
        refiner_channels: 8,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (restorer, refiner, history) = train(&dataset, &geom, &sched, &part, &cfg).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    println!(
        "train: {} epochs x {} imgs, ch={:?}, {} params, {:.1}s total ({:.2}s/epoch)",
        epochs,
        n_train,
        cfg.restorer_channels,
        restorer.parameter_count(),
        train_time,
        train_time / epochs as f64
    );
    for (i, e) in history.epochs.iter().enumerate() {
        if i == 0 || i == history.epochs.len() - 1 || i % 5 == 0 {
            println!(
                "  epoch {i:3}: L_s={:.4} L_i={:.6} L={:.4}",
                e.sinogram_loss, e.image_loss, e.total_loss
            );
        }
    }

    // Single-shot restoration quality vs linear interpolation on held-out data.
    {
        use ctsdm::geometry::forward_project;
        use ctsdm::restorer::{interp_restore, RestoreOperator};
        use rand::SeedableRng;
        let held = random_phantom(&PhantomSpec::random(64, 999_999)).unwrap();
        let y = forward_project(&held, &geom, None).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for t in [10usize, 25, 35, 50] {
            let k = sched.count_at(t);
            let mask = SelectionStrategy::GroupedRandom.draw(k, &part, &mut rng).unwrap();
            let y_t = y.masked(&mask);
            let est = restorer.restore(&y_t, &mask, t).unwrap();
            let interp = interp_restore(&y_t, &mask).unwrap();
            let mse = |a: &ctsdm::geometry::Sinogram| {
                a.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
                    / y.data().len() as f64
            };
            println!(
                "  t={t:2} k={k:3}: model mse={:8.3}  interp mse={:8.3}  zero-fill mse={:8.3}",
                mse(&est),
                mse(&interp),
                mse(&y_t)
            );
        }
    }

    if std::env::var("SKIP_SWEEP").is_ok() {
        return;
    }
    let sweep_cfg = SweepConfig {
        view_counts: DESK_SCALE_COUNTS.to_vec(),
        strategies: vec![SelectionStrategy::GroupedRandom],
        num_test_images: 10,
        seed: 777,
        filter: FilterKind::RamLak,
    };
    let t1 = std::time::Instant::now();
    let report = run_sweep(&sweep_cfg, &geom, &sched, &part, &restorer, Some(&refiner)).unwrap();
    println!("sweep: {:.1}s", t1.elapsed().as_secs_f64());
    println!("count |  sdm (dB) |  fbp (dB) | margin");
    for &count in &DESK_SCALE_COUNTS {
        let sdm = report.mean_psnr("grouped-random", count, "sdm").unwrap();
        let fbp = report.mean_psnr("grouped-random", count, "fbp").unwrap();
        println!("{count:5} | {sdm:9.3} | {fbp:9.3} | {:+.3}", sdm - fbp);
    }
}
