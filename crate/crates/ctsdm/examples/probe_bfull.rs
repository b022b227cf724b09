// Calibration probe: freeze the full-view FBP baseline and check the
// zero-filled sparse-view degradation ordering at both scales.

use ctsdm::geometry::{fbp, forward_project, FanBeamGeometry, FilterKind};
use ctsdm::harness::{psnr, shepp_logan, ssim};
use ctsdm::sampling::fixed_select;

fn main() {
    for (geom, label) in [
        (FanBeamGeometry::full_scale(), "full-scale 256px/488v"),
        (FanBeamGeometry::desk_scale(), "desk-scale 64px/180v"),
    ] {
        let n = geom.image_size_px;
        let phantom = shepp_logan(n);
        let t0 = std::time::Instant::now();
        let sino = forward_project(&phantom, &geom, None).unwrap();
        let rec = fbp(&sino, &geom, FilterKind::RamLak).unwrap();
        let p_full = psnr(&rec, &phantom, 1.0).unwrap();
        let s_full = ssim(&rec, &phantom).unwrap();
        let rec_h = fbp(&sino, &geom, FilterKind::Hann).unwrap();
        let p_hann = psnr(&rec_h, &phantom, 1.0).unwrap();

        let mut line = format!(
            "{label}: B_full(ramlak)={p_full:.3} dB ssim={s_full:.4} | hann={p_hann:.3} dB |"
        );
        for k in [60usize, geom.num_views / 8] {
            let mask = fixed_select(k, geom.num_views).unwrap();
            let masked = sino.masked(&mask);
            let rec_k = fbp(&masked, &geom, FilterKind::RamLak).unwrap();
            let p_k = psnr(&rec_k, &phantom, 1.0).unwrap();
            line += &format!(" {k}views={p_k:.3} dB");
        }
        println!("{line}  ({:.2}s)", t0.elapsed().as_secs_f64());
    }
}
