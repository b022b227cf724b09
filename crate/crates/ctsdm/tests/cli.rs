//! End-to-end tests of the `ctsdm` binary: flags, file outputs, manifests,
//! exit codes, and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn ctsdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsdm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn phantom_writes_files_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let run = ctsdm(&[
        "phantom", "--kind", "shepp-logan", "--size", "64", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    assert!(out.join("phantom_000.ctsd").exists());
    assert!(out.join("phantom_000.json").exists());
    assert!(out.join("phantom.manifest.json").exists());

    // Random kind: 8 files, rerun byte-identical.
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for target in [&out_a, &out_b] {
        let run = ctsdm(&[
            "phantom", "--kind", "random", "--size", "32", "--count", "8", "--seed", "7",
            "--out", target.to_str().unwrap(),
        ]);
        assert!(run.status.success());
    }
    for i in 0..8 {
        let name = format!("phantom_{i:03}.ctsd");
        let a = std::fs::read(out_a.join(&name)).unwrap();
        let b = std::fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn phantom_invalid_size_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = ctsdm(&[
        "phantom", "--size", "0", "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_usage_error() {
    let run = ctsdm(&["phantom", "--frobnicate"]);
    assert_eq!(run.status.code(), Some(1));
    let run = ctsdm(&["--help"]);
    assert_eq!(run.status.code(), Some(0));
}

#[test]
fn project_masks_rows_and_logs_default_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let pdir = dir.path().join("p");
    assert!(ctsdm(&[
        "phantom", "--kind", "random", "--size", "32", "--seed", "3", "--out",
        pdir.to_str().unwrap(),
    ])
    .status
    .success());
    let img = pdir.join("phantom_000.ctsd");

    // Default geometry (no flags): the full-scale scanner constants go into
    // the manifest.
    let sino_path = dir.path().join("full.ctsd");
    let run = ctsdm(&["project", img.to_str().unwrap(), "--out", sino_path.to_str().unwrap()]);
    assert!(run.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("full.manifest.json")).unwrap())
            .unwrap();
    let geo = &manifest["config"]["geometry"];
    assert_eq!(geo["num_views"], 488);
    assert_eq!(geo["num_detectors"], 736);
    assert_eq!(geo["source_to_detector_mm"], 1000.0);
    assert_eq!(geo["source_to_center_mm"], 512.0);

    // Sparse projection at desk scale: exactly 60 nonzero rows.
    let sparse = dir.path().join("sparse.ctsd");
    let run = ctsdm(&[
        "project", img.to_str().unwrap(), "--out", sparse.to_str().unwrap(),
        "--desk-scale", "--views", "60", "--strategy", "fixed",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let (dims, data) = read_tensor_file(&sparse);
    assert_eq!(dims, vec![180, 128]);
    let nonzero_rows = (0..180)
        .filter(|r| data[r * 128..(r + 1) * 128].iter().any(|&v| v != 0.0))
        .count();
    assert_eq!(nonzero_rows, 60);

    // Grouped-random with a seed is reproducible.
    let g1 = dir.path().join("g1.ctsd");
    let g2 = dir.path().join("g2.ctsd");
    for target in [&g1, &g2] {
        assert!(ctsdm(&[
            "project", img.to_str().unwrap(), "--out", target.to_str().unwrap(),
            "--desk-scale", "--views", "45", "--strategy", "grouped-random", "--seed", "3",
        ])
        .status
        .success());
    }
    assert_eq!(std::fs::read(&g1).unwrap(), std::fs::read(&g2).unwrap());
}

/// Minimal CTSD reader for test assertions.
fn read_tensor_file(path: &Path) -> (Vec<usize>, Vec<f64>) {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[0..4], b"CTSD");
    let rank = bytes[7] as usize;
    let mut dims = Vec::new();
    let mut off = 8;
    for _ in 0..rank {
        dims.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize);
        off += 8;
    }
    let data = bytes[off..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    (dims, data)
}

/// Shared tiny-training fixture: phantoms plus a 1-epoch checkpoint.
fn train_tiny(dir: &Path, seed: &str, lambda: &str) -> std::path::PathBuf {
    let data = dir.join("data");
    assert!(ctsdm(&[
        "phantom", "--kind", "random", "--size", "32", "--count", "2", "--seed", "11",
        "--out", data.to_str().unwrap(),
    ])
    .status
    .success());
    let model = dir.join(format!("model_{seed}_{lambda}.ctsm"));
    let run = ctsdm(&[
        "train", "--data", data.to_str().unwrap(), "--out", model.to_str().unwrap(),
        "--epochs", "1", "--seed", seed, "--lambda", lambda,
        "--full-views", "40", "--detectors", "32", "--steps", "8", "--k-min", "5",
        "--groups", "4",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    model
}

#[test]
fn train_smoke_writes_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny(dir.path(), "5", "1.0");
    assert!(model.exists());
    let history = model.with_extension("history.csv");
    let text = std::fs::read_to_string(&history).unwrap();
    assert!(text.starts_with("epoch,sinogram_loss,image_loss,total_loss"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn train_lambda_zero_makes_total_equal_sinogram_loss() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny(dir.path(), "5", "0.0");
    let text = std::fs::read_to_string(model.with_extension("history.csv")).unwrap();
    let line = text.lines().nth(1).unwrap();
    let cols: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(cols[0], cols[2], "with lambda 0 the total must equal the sinogram term");
}

#[test]
fn train_same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "9", "1.0");
    let dir2 = tempfile::tempdir().unwrap();
    let b = train_tiny(dir2.path(), "9", "1.0");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn reconstruct_oracle_reproduces_truth() {
    let dir = tempfile::tempdir().unwrap();
    let pdir = dir.path().join("p");
    assert!(ctsdm(&[
        "phantom", "--kind", "random", "--size", "32", "--seed", "21", "--out",
        pdir.to_str().unwrap(),
    ])
    .status
    .success());
    let img = pdir.join("phantom_000.ctsd");
    let truth = dir.path().join("truth.ctsd");
    assert!(ctsdm(&[
        "project", img.to_str().unwrap(), "--out", truth.to_str().unwrap(),
        "--full-views", "40", "--detectors", "32",
    ])
    .status
    .success());
    let sparse = dir.path().join("sparse.ctsd");
    assert!(ctsdm(&[
        "project", img.to_str().unwrap(), "--out", sparse.to_str().unwrap(),
        "--full-views", "40", "--detectors", "32", "--views", "7", "--strategy",
        "grouped-random", "--seed", "2",
    ])
    .status
    .success());

    let out = dir.path().join("rec");
    let run = ctsdm(&[
        "reconstruct", sparse.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--restorer", "oracle", "--truth", truth.to_str().unwrap(),
        "--steps", "10", "--k-min", "5", "--groups", "4",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = stdout(&run);
    assert!(text.contains("data-consistency residual"), "missing residual in: {text}");

    // The estimate equals the truth up to f32 tensor quantization.
    let (_, est) = read_tensor_file(&out.join("sinogram_estimate.ctsd"));
    let (_, tru) = read_tensor_file(&truth);
    let worst = est
        .iter()
        .zip(&tru)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(worst <= 1e-3, "estimate deviates from truth by {worst}");

    // Residual reported in the manifest is structurally tiny.
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("reconstruct.manifest.json")).unwrap(),
    )
    .unwrap();
    let residual = manifest["config"]["data_consistency_residual"].as_f64().unwrap();
    assert!(residual <= 1e-5, "residual {residual}");
}

#[test]
fn reconstruct_full_view_input_reduces_to_fbp() {
    let dir = tempfile::tempdir().unwrap();
    let pdir = dir.path().join("p");
    assert!(ctsdm(&[
        "phantom", "--kind", "random", "--size", "32", "--seed", "23", "--out",
        pdir.to_str().unwrap(),
    ])
    .status
    .success());
    let img = pdir.join("phantom_000.ctsd");
    let full = dir.path().join("full.ctsd");
    assert!(ctsdm(&[
        "project", img.to_str().unwrap(), "--out", full.to_str().unwrap(),
        "--full-views", "40", "--detectors", "32", "--views", "40", "--strategy", "fixed",
    ])
    .status
    .success());
    let out = dir.path().join("rec");
    let run = ctsdm(&[
        "reconstruct", full.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--restorer", "interp", "--steps", "10", "--k-min", "5", "--groups", "4",
    ]);
    assert!(run.status.success());
    assert!(stdout(&run).contains("t*=0"), "full input must start at step zero");
}

#[test]
fn reconstruct_missing_model_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let pdir = dir.path().join("p");
    assert!(ctsdm(&[
        "phantom", "--kind", "random", "--size", "32", "--seed", "29", "--out",
        pdir.to_str().unwrap(),
    ])
    .status
    .success());
    let img = pdir.join("phantom_000.ctsd");
    let sparse = dir.path().join("s.ctsd");
    assert!(ctsdm(&[
        "project", img.to_str().unwrap(), "--out", sparse.to_str().unwrap(),
        "--full-views", "40", "--detectors", "32", "--views", "10", "--strategy", "fixed",
    ])
    .status
    .success());
    let run = ctsdm(&[
        "reconstruct", sparse.to_str().unwrap(), "--out",
        dir.path().join("rec").to_str().unwrap(), "--model", "/nonexistent/model.ctsm",
        "--steps", "8", "--k-min", "5", "--groups", "4",
    ]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn sweep_writes_reports_with_requested_strata() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let run = ctsdm(&[
        "sweep", "--restorer", "interp", "--out", out.to_str().unwrap(),
        "--full-views", "40", "--detectors", "32", "--size", "32",
        "--counts", "20,10", "--strategies", "fixed,random,grouped-random",
        "--images", "2", "--steps", "8", "--k-min", "5", "--groups", "4", "--seed", "1",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rows = std::fs::read_to_string(out.join("sweep_rows.csv")).unwrap();
    assert!(rows.starts_with("strategy,view_count,image_id,method,psnr_db,ssim"));
    // 3 strategies × 2 counts × 2 images × 2 methods + header.
    assert_eq!(rows.lines().count(), 1 + 24);
    for strategy in ["fixed", "random", "grouped-random"] {
        assert!(rows.contains(strategy));
    }
    let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert!(summary.starts_with("strategy,view_count,method,psnr_mean,psnr_std,ssim_mean,ssim_std"));
}

#[test]
fn sweep_paper_scale_uses_full_geometry_and_count_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let run = ctsdm(&[
        "sweep", "--restorer", "interp", "--out", out.to_str().unwrap(),
        "--paper-scale", "--images", "1", "--strategies", "fixed", "--seed", "2",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("sweep.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["geometry"]["num_views"], 488);
    assert_eq!(manifest["config"]["geometry"]["num_detectors"], 736);
    let counts: Vec<u64> = manifest["config"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![116, 100, 74, 60, 55, 40, 30, 23]);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(&config, r#"{"seed": 55}"#).unwrap();

    // Seed comes from the config file.
    let out_a = dir.path().join("a");
    assert!(ctsdm(&[
        "phantom", "--config", config.to_str().unwrap(), "--kind", "random", "--size", "32",
        "--out", out_a.to_str().unwrap(),
    ])
    .status
    .success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_a.join("phantom.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["seed"], 55);

    // An explicit flag wins over the file.
    let out_b = dir.path().join("b");
    assert!(ctsdm(&[
        "phantom", "--config", config.to_str().unwrap(), "--kind", "random", "--size", "32",
        "--seed", "77", "--out", out_b.to_str().unwrap(),
    ])
    .status
    .success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_b.join("phantom.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["seed"], 77);
}

#[test]
fn thread_cap_env_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_ctsdm"))
        .env("CTSDM_THREADS", "1")
        .args([
            "phantom", "--kind", "random", "--size", "32", "--out",
            dir.path().join("p").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(run.status.success());
}
