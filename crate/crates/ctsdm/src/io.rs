//! File formats: CTSD tensors, CTSM model checkpoints, JSON sidecars,
//! training-history CSV, PGM image dumps, and run manifests.
//!
//! Tensor layout: magic `CTSD`, format version `u16` LE, dtype code `u8`
//! (1 = f32 little-endian), rank `u8`, dims as `u64` LE, then raw row-major
//! data. Every tensor travels with a JSON sidecar of the same basename
//! carrying geometry, mask indices, and the provenance seed.
//!
//! Checkpoint layout: magic `CTSM`, version `u16` LE, `u32` LE length of a
//! JSON architecture descriptor, the descriptor, then the parameter blobs of
//! restorer and refiner as f32 LE in descriptor order.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, Image, Sinogram};
use crate::restorer::{RefinerModel, RestorerModel, TrainHistory};
use crate::sampling::{StepSchedule, ViewMask};

const TENSOR_MAGIC: &[u8; 4] = b"CTSD";
const TENSOR_VERSION: u16 = 1;
const DTYPE_F32LE: u8 = 1;

const MODEL_MAGIC: &[u8; 4] = b"CTSM";
const MODEL_VERSION: u16 = 1;

/// Writes a row-major f64 buffer as an f32 CTSD tensor file.
pub fn write_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "dims {:?} imply {expected} values, got {}",
            dims,
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(16 + dims.len() * 8 + data.len() * 4);
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.push(DTYPE_F32LE);
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a CTSD tensor file back as (dims, f64 values).
pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header)?;
    if &header[0..4] != TENSOR_MAGIC {
        return Err(Error::Format(format!("{}: not a CTSD tensor", path.display())));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported tensor version {version}")));
    }
    if header[6] != DTYPE_F32LE {
        return Err(Error::Format(format!("unsupported dtype code {}", header[6])));
    }
    let rank = header[7] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        file.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let count: usize = dims.iter().product();
    let mut raw = vec![0u8; count * 4];
    file.read_exact(&mut raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((dims, data))
}

/// Serializable mirror of the geometry parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeometrySpec {
    pub num_views: usize,
    pub num_detectors: usize,
    pub source_to_detector_mm: f64,
    pub source_to_center_mm: f64,
    pub image_size_px: usize,
    pub pixel_spacing_mm: f64,
}

impl GeometrySpec {
    pub fn of(geom: &FanBeamGeometry) -> Self {
        Self {
            num_views: geom.num_views,
            num_detectors: geom.num_detectors,
            source_to_detector_mm: geom.source_to_detector_mm,
            source_to_center_mm: geom.source_to_center_mm,
            image_size_px: geom.image_size_px,
            pixel_spacing_mm: geom.pixel_spacing_mm,
        }
    }

    pub fn build(&self) -> Result<FanBeamGeometry> {
        FanBeamGeometry::new(
            self.num_views,
            self.num_detectors,
            self.source_to_detector_mm,
            self.source_to_center_mm,
            self.image_size_px,
            self.pixel_spacing_mm,
        )
    }
}

/// JSON sidecar accompanying every tensor file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Sidecar {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySpec>,
    /// Sorted 1-based measured view indices, when the tensor is an
    /// undersampled sinogram.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Sidecar path: same basename, `.json` extension.
pub fn sidecar_path(tensor_path: &Path) -> PathBuf {
    tensor_path.with_extension("json")
}

pub fn write_sidecar(tensor_path: &Path, sidecar: &Sidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar)?;
    fs::write(sidecar_path(tensor_path), text)?;
    Ok(())
}

pub fn read_sidecar(tensor_path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(sidecar_path(tensor_path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Saves an image tensor plus sidecar.
pub fn save_image(path: &Path, img: &Image, seed: Option<u64>) -> Result<()> {
    write_tensor(path, &[img.size(), img.size()], img.data())?;
    write_sidecar(path, &Sidecar { geometry: None, mask: None, seed })
}

pub fn load_image(path: &Path) -> Result<Image> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(Error::Format(format!("{}: expected a square rank-2 tensor", path.display())));
    }
    Image::from_values(dims[0], data)
}

/// Saves a sinogram tensor; the sidecar records geometry, mask, seed.
pub fn save_sinogram(
    path: &Path,
    sino: &Sinogram,
    geom: &FanBeamGeometry,
    seed: Option<u64>,
) -> Result<()> {
    write_tensor(path, &[sino.num_views(), sino.num_detectors()], sino.data())?;
    write_sidecar(
        path,
        &Sidecar {
            geometry: Some(GeometrySpec::of(geom)),
            mask: sino.mask().map(|m| m.indices().to_vec()),
            seed,
        },
    )
}

/// Loads a sinogram and reattaches its mask from the sidecar (if present).
pub fn load_sinogram(path: &Path) -> Result<(Sinogram, Sidecar)> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 2 {
        return Err(Error::Format(format!("{}: expected a rank-2 tensor", path.display())));
    }
    let mut sino = Sinogram::from_values(dims[0], dims[1], data)?;
    let sidecar = read_sidecar(path).unwrap_or_default();
    if let Some(indices) = &sidecar.mask {
        sino.set_mask(Some(ViewMask::new(indices.iter().copied(), dims[0])?));
    }
    Ok((sino, sidecar))
}

/// Schedule serialization: `{v, T, k_min, counts, seed}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub v: usize,
    #[serde(rename = "T")]
    pub total_steps: usize,
    pub k_min: usize,
    pub counts: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ScheduleFile {
    pub fn of(sched: &StepSchedule, seed: Option<u64>) -> Self {
        Self {
            v: sched.full_views(),
            total_steps: sched.total_steps(),
            k_min: sched.min_views(),
            counts: sched.counts().to_vec(),
            seed,
        }
    }

    pub fn build(&self) -> Result<StepSchedule> {
        StepSchedule::from_counts(self.v, self.k_min, self.counts.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointDescriptor {
    restorer: crate::restorer::RestorerArch,
    restorer_params: usize,
    refiner: crate::restorer::RefinerArch,
    refiner_params: usize,
}

/// Writes both models into one CTSM checkpoint.
pub fn save_models(path: &Path, restorer: &RestorerModel, refiner: &RefinerModel) -> Result<()> {
    let descriptor = CheckpointDescriptor {
        restorer: restorer.arch().clone(),
        restorer_params: restorer.parameter_count(),
        refiner: refiner.arch().clone(),
        refiner_params: refiner.parameter_count(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for &v in restorer.parameters().iter().chain(refiner.parameters()) {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads a CTSM checkpoint back into model instances.
pub fn load_models(path: &Path) -> Result<(RestorerModel, RefinerModel)> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 10];
    file.read_exact(&mut header)?;
    if &header[0..4] != MODEL_MAGIC {
        return Err(Error::Format(format!("{}: not a CTSM checkpoint", path.display())));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let json_len = u32::from_le_bytes([header[6], header[7], header[8], header[9]]) as usize;
    let mut json = vec![0u8; json_len];
    file.read_exact(&mut json)?;
    let descriptor: CheckpointDescriptor = serde_json::from_slice(&json)?;
    let total = descriptor.restorer_params + descriptor.refiner_params;
    let mut raw = vec![0u8; total * 4];
    file.read_exact(&mut raw)?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let (r_vals, f_vals) = values.split_at(descriptor.restorer_params);
    let restorer = RestorerModel::from_parameters(descriptor.restorer, r_vals.to_vec())?;
    let refiner = RefinerModel::from_parameters(descriptor.refiner, f_vals.to_vec())?;
    Ok((restorer, refiner))
}

/// Training history as CSV: `epoch,sinogram_loss,image_loss,total_loss`.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,sinogram_loss,image_loss,total_loss\n");
    for (i, e) in history.epochs.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i, e.sinogram_loss, e.image_loss, e.total_loss));
    }
    out
}

/// 8-bit binary PGM dump of an image in `[0, 1]`.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let n = img.size();
    let mut buf = format!("P5\n{n} {n}\n255\n").into_bytes();
    buf.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

/// Record of one CLI invocation, written alongside every output so a run can
/// be replayed exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub wall_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            version: format!("ctsdm {}", env!("CARGO_PKG_VERSION")),
            wall_secs: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::restorer::{RefinerArch, RestorerArch, TrainConfig};
    use crate::sampling::{build_schedule, fixed_select, partition_groups};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ctsd");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        write_tensor(&path, &[3, 4], &data).unwrap();
        let (dims, back) = read_tensor(&path).unwrap();
        assert_eq!(dims, vec![3, 4]);
        // f32 storage is exact for these values.
        assert_eq!(back, data);
        assert!(write_tensor(&path, &[5, 5], &data).is_err());
    }

    #[test]
    fn tensor_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ctsd");
        fs::write(&path, b"NOPE").unwrap();
        assert!(read_tensor(&path).is_err());
    }

    #[test]
    fn sinogram_round_trip_with_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ctsd");
        let geom = FanBeamGeometry::new(20, 8, 1000.0, 512.0, 16, 1.0).unwrap();
        let vals: Vec<f64> = (0..20 * 8).map(|i| (i % 7) as f64).collect();
        let sino = Sinogram::from_values(20, 8, vals).unwrap();
        let mask = fixed_select(5, 20).unwrap();
        let masked = sino.masked(&mask);
        save_sinogram(&path, &masked, &geom, Some(99)).unwrap();
        let (back, sidecar) = load_sinogram(&path).unwrap();
        assert_eq!(back.data(), masked.data());
        assert_eq!(back.mask().unwrap().indices(), mask.indices());
        assert_eq!(sidecar.seed, Some(99));
        assert_eq!(sidecar.geometry.unwrap().build().unwrap(), geom);
    }

    #[test]
    fn image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.ctsd");
        let img = crate::harness::shepp_logan(32);
        save_image(&path, &img, Some(1)).unwrap();
        let back = load_image(&path).unwrap();
        // f32 quantization only.
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ctsm");
        let geom = FanBeamGeometry::new(16, 16, 1000.0, 512.0, 16, 1.0).unwrap();
        let sched = build_schedule(16, 6, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = RestorerArch::for_geometry(&geom, &sched, [2, 3, 4], 4).unwrap();
        let restorer = RestorerModel::new(arch, &mut rng);
        let refiner = RefinerModel::new(RefinerArch { size_px: 16, channels: 3 }, &mut rng);
        save_models(&path, &restorer, &refiner).unwrap();
        let (r2, f2) = load_models(&path).unwrap();
        assert_eq!(r2.arch(), restorer.arch());
        assert_eq!(f2.arch(), refiner.arch());
        // Parameters survive to f32 precision.
        for (a, b) in r2.parameters().iter().zip(restorer.parameters()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // Writing the same models twice gives identical bytes.
        let path2 = dir.path().join("m2.ctsm");
        save_models(&path2, &restorer, &refiner).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn schedule_file_round_trip() {
        let sched = build_schedule(180, 50, 9).unwrap();
        let file = ScheduleFile::of(&sched, Some(7));
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"T\":50"));
        let parsed: ScheduleFile = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.build().unwrap(), sched);
    }

    #[test]
    fn training_history_csv_shape() {
        let geom = FanBeamGeometry::new(16, 16, 1000.0, 512.0, 16, 1.0).unwrap();
        let sched = build_schedule(16, 4, 4).unwrap();
        let part = partition_groups(16, 4).unwrap();
        let imgs = vec![
            crate::harness::random_phantom(&crate::harness::PhantomSpec::random(16, 0)).unwrap(),
        ];
        let cfg = TrainConfig {
            epochs: 3,
            restorer_channels: [2, 2, 2],
            refiner_channels: 2,
            emb_dim: 4,
            ..TrainConfig::default()
        };
        let (_, _, history) = crate::restorer::train(&imgs, &geom, &sched, &part, &cfg).unwrap();
        let csv = history_csv(&history);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("epoch,sinogram_loss,image_loss,total_loss"));
    }

    #[test]
    fn pgm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = crate::harness::shepp_logan(16);
        write_pgm(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(bytes.len(), 13 + 256);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let mut manifest = RunManifest::new("phantom", serde_json::json!({"size": 64, "count": 2}));
        manifest.seed = Some(5);
        manifest.outputs.push("p0.ctsd".into());
        manifest.write(&path).unwrap();
        let back: RunManifest =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.command, "phantom");
        assert_eq!(back.seed, Some(5));
        assert_eq!(back.outputs, vec!["p0.ctsd".to_string()]);
    }
}
