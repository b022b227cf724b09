use ctsdm::geometry::{FanBeamGeometry, FilterKind};
use ctsdm::harness::sweep::{run_sweep, SweepConfig, DESK_SCALE_COUNTS};
use ctsdm::restorer::InterpRestorer;
use ctsdm::sampling::{build_schedule, partition_groups, SelectionStrategy};

fn main() {
    let geom = FanBeamGeometry::desk_scale();
    let sched = build_schedule(180, 50, 9).unwrap();
    let part = partition_groups(180, 8).unwrap();
    let sweep_cfg = SweepConfig {
        view_counts: DESK_SCALE_COUNTS.to_vec(),
        strategies: vec![SelectionStrategy::GroupedRandom],
        num_test_images: 10,
        seed: 777,
        filter: FilterKind::RamLak,
    };
    let report = run_sweep(&sweep_cfg, &geom, &sched, &part, &InterpRestorer, None).unwrap();
    println!("count |  interp-sdm |  fbp | margin");
    for &count in &DESK_SCALE_COUNTS {
        let sdm = report.mean_psnr("grouped-random", count, "sdm").unwrap();
        let fbp = report.mean_psnr("grouped-random", count, "fbp").unwrap();
        println!("{count:5} | {sdm:9.3} | {fbp:9.3} | {:+.3}", sdm - fbp);
    }
}
