// Scratch probe for projector symmetry and FBP scaling. Not part of the
// shipped examples; used to calibrate test tolerances.

use ctsdm::geometry::{fbp, forward_project, FanBeamGeometry, FilterKind, Image};

fn disk_image(n: usize, radius_frac: f64, ss: usize) -> Image {
    let center = 0.5 * (n as f64 - 1.0);
    let radius = radius_frac * 0.5 * n as f64;
    let mut vals = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut inside = 0usize;
            for sy in 0..ss {
                for sx in 0..ss {
                    let x = c as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5 - center;
                    let y = r as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5 - center;
                    if (x * x + y * y).sqrt() <= radius {
                        inside += 1;
                    }
                }
            }
            vals[r * n + c] = inside as f64 / (ss * ss) as f64;
        }
    }
    Image::from_values(n, vals).unwrap()
}

fn smooth_disk(n: usize, radius_frac: f64, rim_px: f64) -> Image {
    let center = 0.5 * (n as f64 - 1.0);
    let radius = radius_frac * 0.5 * n as f64;
    let mut vals = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let x = c as f64 - center;
            let y = r as f64 - center;
            let rr = (x * x + y * y).sqrt();
            vals[r * n + c] = if rr <= radius - rim_px {
                1.0
            } else if rr >= radius + rim_px {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (rr - radius + rim_px) / (2.0 * rim_px)).cos())
            };
        }
    }
    Image::from_values(n, vals).unwrap()
}

fn main() {
    let geom = FanBeamGeometry::full_scale();
    for rim in [1.5f64, 3.0, 5.0] {
        let img = smooth_disk(256, 0.7, rim);
        let sino = forward_project(&img, &geom, None).unwrap();
        let d = sino.num_detectors();
        let peak = sino.data().iter().cloned().fold(0.0, f64::max);
        let row0 = &sino.data()[..d];
        let mut max_dev: f64 = 0.0;
        for row in 1..sino.num_views() {
            for bin in 0..d {
                max_dev = max_dev.max((sino.data()[row * d + bin] - row0[bin]).abs());
            }
        }
        println!("smooth rim={rim}px  peak={peak:.3}  dev/peak={:.3e}", max_dev / peak);
    }
    for ss in [1usize, 4, 16] {
        let img = disk_image(256, 0.7, ss);
        let t0 = std::time::Instant::now();
        let sino = forward_project(&img, &geom, None).unwrap();
        let proj_t = t0.elapsed().as_secs_f64();
        let d = sino.num_detectors();
        let peak = sino.data().iter().cloned().fold(0.0, f64::max);
        let row0 = &sino.data()[..d];
        let mut max_dev: f64 = 0.0;
        for row in 1..sino.num_views() {
            for bin in 0..d {
                max_dev = max_dev.max((sino.data()[row * d + bin] - row0[bin]).abs());
            }
        }
        let t1 = std::time::Instant::now();
        let rec = fbp(&sino, &geom, FilterKind::RamLak).unwrap();
        let fbp_t = t1.elapsed().as_secs_f64();
        let n = 256;
        let center_val = rec.get(n / 2, n / 2);
        // mean over interior disk (radius 0.5 of disk radius)
        let cen = 0.5 * (n as f64 - 1.0);
        let rad = 0.7 * 0.5 * n as f64 * 0.5;
        let mut sum = 0.0;
        let mut cnt = 0usize;
        let mut mse = 0.0;
        for r in 0..n {
            for c in 0..n {
                let dx = c as f64 - cen;
                let dy = r as f64 - cen;
                if (dx * dx + dy * dy).sqrt() < rad {
                    sum += rec.get(r, c);
                    cnt += 1;
                }
                let e = rec.get(r, c) - img.get(r, c);
                mse += e * e;
            }
        }
        mse /= (n * n) as f64;
        let psnr = 10.0 * (1.0 / mse).log10();
        println!(
            "ss={ss:2}  peak={peak:8.3}  max_dev={max_dev:.3e}  dev/peak={:.3e}  center={center_val:.4}  interior_mean={:.4}  psnr={psnr:.2} dB  (proj {proj_t:.2}s, fbp {fbp_t:.2}s)",
            max_dev / peak,
            sum / cnt as f64
        );
    }
}
