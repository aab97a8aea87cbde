//! Dataset directory layout: `manifest.json` plus one binary `.vtp` file
//! per sample.
//!
//! `sample_<id>.vtp`, little-endian throughout:
//! magic `VTP1` (4 bytes); `u32` N, H, W; `N*H*W*3` f32 image data (row
//! major, interleaved channels); `u32` angle count N; `N` f32 angles;
//! `5*15` f32 measurement matrix. Readers reject unknown magic or version.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{derive_seed, seed_stream};
use crate::synth::material::{
    frame_angle, measure_tactile, render_view, sample_material, GenConfig, NUM_MEASUREMENTS,
};
use crate::synth::registry::{PropertyRegistry, NUM_PROPERTIES};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const VTP_MAGIC: &[u8; 4] = b"VTP1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitIds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub num_samples: usize,
    pub views_per_sample: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub property_acronyms: Vec<String>,
    pub split: SplitIds,
    pub seed: u64,
    pub gen_config: GenConfig,
}

/// Split membership of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One multiview image sequence with its viewing angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSequence {
    /// `N` frames, each `H*W*3` in `[0,1]`, row-major interleaved channels.
    pub frames: Vec<Vec<f32>>,
    /// Per-frame roll angles in degrees.
    pub angles: Vec<f32>,
    pub height: usize,
    pub width: usize,
}

impl ViewSequence {
    /// Frame index whose angle is closest to 0 degrees (lowest index on ties).
    pub fn nadir_index(&self) -> usize {
        let mut best = 0usize;
        let mut best_abs = f32::INFINITY;
        for (i, &a) in self.angles.iter().enumerate() {
            if a.abs() < best_abs {
                best_abs = a.abs();
                best = i;
            }
        }
        best
    }

    /// Frame `k` converted to `[3, H, W]` channel-major layout.
    pub fn frame_chw(&self, k: usize) -> Vec<f32> {
        let (h, w) = (self.height, self.width);
        let src = &self.frames[k];
        let plane = h * w;
        let mut out = vec![0.0f32; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                out[c * plane + p] = src[p * 3 + c];
            }
        }
        out
    }
}

/// One dataset sample: a view sequence plus the repeated tactile
/// measurements. The training target is the column mean of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VisuoTactilePair {
    pub id: usize,
    pub sequence: ViewSequence,
    /// `5 x 15` noisy measurement repeats.
    pub measurements: Vec<[f32; NUM_PROPERTIES]>,
    pub split: Split,
}

impl VisuoTactilePair {
    /// Column mean of the five measurement repeats.
    pub fn target(&self) -> [f32; NUM_PROPERTIES] {
        let mut t = [0.0f32; NUM_PROPERTIES];
        for row in &self.measurements {
            for (i, &v) in row.iter().enumerate() {
                t[i] += v;
            }
        }
        for v in &mut t {
            *v /= self.measurements.len() as f32;
        }
        t
    }
}

/// An in-memory dataset with its manifest and registry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub registry: PropertyRegistry,
    /// Samples in id order (ids are dense `0..num_samples`).
    pub samples: Vec<VisuoTactilePair>,
}

impl Dataset {
    pub fn train_ids(&self) -> &[usize] {
        &self.manifest.split.train
    }

    pub fn val_ids(&self) -> &[usize] {
        &self.manifest.split.val
    }

    pub fn sample(&self, id: usize) -> &VisuoTactilePair {
        &self.samples[id]
    }
}

fn vtp_path(root: &Path, id: usize) -> PathBuf {
    root.join(format!("sample_{id}.vtp"))
}

fn write_vtp(path: &Path, pair: &VisuoTactilePair) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(VTP_MAGIC).map_err(io_err)?;
    let n = pair.sequence.frames.len() as u32;
    w.write_u32::<LittleEndian>(n).map_err(io_err)?;
    w.write_u32::<LittleEndian>(pair.sequence.height as u32)
        .map_err(io_err)?;
    w.write_u32::<LittleEndian>(pair.sequence.width as u32)
        .map_err(io_err)?;
    for frame in &pair.sequence.frames {
        for &v in frame {
            w.write_f32::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    w.write_u32::<LittleEndian>(n).map_err(io_err)?;
    for &a in &pair.sequence.angles {
        w.write_f32::<LittleEndian>(a).map_err(io_err)?;
    }
    for row in &pair.measurements {
        for &v in row {
            w.write_f32::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_vtp(path: &Path, manifest: &Manifest, id: usize, split: Split) -> Result<VisuoTactilePair> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::corrupt(path, "file shorter than header"))?;
    if &magic != VTP_MAGIC {
        return Err(Error::corrupt(
            path,
            format!("unknown magic {magic:?}, expected \"VTP1\""),
        ));
    }
    let trunc = |what: &str| Error::corrupt(path, format!("truncated while reading {what}"));
    let n = r.read_u32::<LittleEndian>().map_err(|_| trunc("view count"))? as usize;
    let h = r.read_u32::<LittleEndian>().map_err(|_| trunc("height"))? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(|_| trunc("width"))? as usize;
    if n != manifest.views_per_sample || h != manifest.image_height || w != manifest.image_width {
        return Err(Error::corrupt(
            path,
            format!(
                "dimensions {n}x{h}x{w} disagree with manifest {}x{}x{}",
                manifest.views_per_sample, manifest.image_height, manifest.image_width
            ),
        ));
    }
    let frame_len = h * w * 3;
    let mut frames = Vec::with_capacity(n);
    let mut buf = vec![0u8; frame_len * 4];
    for k in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| trunc(&format!("frame {k}")))?;
        let mut frame = vec![0.0f32; frame_len];
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            frame[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        if !frame.iter().all(|v| v.is_finite()) {
            return Err(Error::corrupt(path, format!("non-finite pixels in frame {k}")));
        }
        frames.push(frame);
    }
    let n2 = r.read_u32::<LittleEndian>().map_err(|_| trunc("angle count"))? as usize;
    if n2 != n {
        return Err(Error::corrupt(
            path,
            format!("angle count {n2} disagrees with view count {n}"),
        ));
    }
    let mut angles = Vec::with_capacity(n);
    for k in 0..n {
        let a = r
            .read_f32::<LittleEndian>()
            .map_err(|_| trunc(&format!("angle {k}")))?;
        angles.push(a);
    }
    let mut measurements = Vec::with_capacity(NUM_MEASUREMENTS);
    for row_idx in 0..NUM_MEASUREMENTS {
        let mut row = [0.0f32; NUM_PROPERTIES];
        for v in row.iter_mut() {
            *v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| trunc(&format!("measurement row {row_idx}")))?;
        }
        for &v in &row {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::corrupt(
                    path,
                    format!("measurement {v} outside [0, 100]"),
                ));
            }
        }
        measurements.push(row);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::corrupt(path, "trailing bytes after measurements"));
    }
    Ok(VisuoTactilePair {
        id,
        sequence: ViewSequence {
            frames,
            angles,
            height: h,
            width: w,
        },
        measurements,
        split,
    })
}

/// Generates a dataset directory: per-sample `.vtp` files plus the manifest.
/// Pure function of `(cfg, seed)`: the same inputs produce byte-identical
/// directories.
pub fn generate_dataset(cfg: &GenConfig, seed: u64, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if cfg.num_samples < 10 {
        return Err(Error::InvalidConfig(format!(
            "need at least 10 samples, got {}",
            cfg.num_samples
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n_views = cfg.views_per_sample;
    for id in 0..cfg.num_samples {
        let mut rng = seed_stream(derive_seed(seed, id as u64), "sample");
        let material = sample_material(&mut rng, cfg)?;
        let mut frames = Vec::with_capacity(n_views);
        let mut angles = Vec::with_capacity(n_views);
        for k in 0..n_views {
            let angle = frame_angle(k, n_views);
            frames.push(render_view(&material, angle, cfg)?);
            angles.push(angle);
        }
        let measurements = measure_tactile(&material, &mut rng, cfg.sigma_meas)?;
        let pair = VisuoTactilePair {
            id,
            sequence: ViewSequence {
                frames,
                angles,
                height: cfg.image_height,
                width: cfg.image_width,
            },
            measurements,
            split: Split::Train, // split assigned below; not stored in the file
        };
        write_vtp(&vtp_path(out_dir, id), &pair)?;
    }

    // 90/10 split by seeded shuffle; at least one validation sample.
    let mut ids: Vec<usize> = (0..cfg.num_samples).collect();
    ids.shuffle(&mut seed_stream(seed, "split"));
    let val_count = (cfg.num_samples / 10).max(1);
    let mut val: Vec<usize> = ids[..val_count].to_vec();
    let mut train: Vec<usize> = ids[val_count..].to_vec();
    train.sort_unstable();
    val.sort_unstable();

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        num_samples: cfg.num_samples,
        views_per_sample: n_views,
        image_height: cfg.image_height,
        image_width: cfg.image_width,
        property_acronyms: PropertyRegistry::standard().acronyms(),
        split: SplitIds { train, val },
        seed,
        gen_config: cfg.clone(),
    };
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidConfig(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, json.as_bytes()).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Lazy dataset handle: manifest loaded and validated, samples read on
/// demand (and re-validated as they are read).
pub struct DatasetReader {
    root: PathBuf,
    manifest: Manifest,
}

impl DatasetReader {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest_path = root.join(MANIFEST_NAME);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::corrupt(&manifest_path, format!("manifest parse: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::corrupt(
                &manifest_path,
                format!(
                    "unknown format_version {} (reader supports {FORMAT_VERSION})",
                    manifest.format_version
                ),
            ));
        }
        let expected = PropertyRegistry::standard().acronyms();
        if manifest.property_acronyms != expected {
            return Err(Error::corrupt(
                &manifest_path,
                format!(
                    "property acronyms {:?} do not match the registry order",
                    manifest.property_acronyms
                ),
            ));
        }
        if manifest.split.val.is_empty() || manifest.split.train.is_empty() {
            return Err(Error::corrupt(
                &manifest_path,
                "both train and val splits must be non-empty",
            ));
        }
        let mut seen = vec![false; manifest.num_samples];
        for &id in manifest.split.train.iter().chain(&manifest.split.val) {
            if id >= manifest.num_samples || seen[id] {
                return Err(Error::corrupt(
                    &manifest_path,
                    format!("split id {id} out of range or duplicated"),
                ));
            }
            seen[id] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::corrupt(
                &manifest_path,
                "split does not cover every sample id",
            ));
        }
        Ok(DatasetReader {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn split_of(&self, id: usize) -> Split {
        if self.manifest.split.val.contains(&id) {
            Split::Val
        } else {
            Split::Train
        }
    }

    pub fn load_sample(&self, id: usize) -> Result<VisuoTactilePair> {
        if id >= self.manifest.num_samples {
            return Err(Error::InvalidArgument(format!(
                "sample id {id} out of range (dataset has {})",
                self.manifest.num_samples
            )));
        }
        read_vtp(&vtp_path(&self.root, id), &self.manifest, id, self.split_of(id))
    }

    /// Lazily iterates all samples in id order.
    pub fn iter(&self) -> impl Iterator<Item = Result<VisuoTactilePair>> + '_ {
        (0..self.manifest.num_samples).map(move |id| self.load_sample(id))
    }

    /// Reads the entire dataset into memory.
    pub fn load_all(&self) -> Result<Dataset> {
        let samples = self.iter().collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            manifest: self.manifest.clone(),
            registry: PropertyRegistry::standard(),
            samples,
        })
    }
}

/// Convenience: open and fully load a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    DatasetReader::open(root)?.load_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::material::default_beta_shapes;

    fn tiny_cfg() -> GenConfig {
        GenConfig {
            num_samples: 10,
            views_per_sample: 4,
            image_height: 8,
            image_width: 8,
            sigma_meas: 1.0,
            pixel_noise: 0.005,
            beta_shapes: default_beta_shapes(),
        }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        generate_dataset(&cfg, 77, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.samples.len(), 10);

        // Regenerating into a second directory gives byte-identical files.
        let dir2 = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, 77, dir2.path()).unwrap();
        for entry in fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(dir.path().join(&name)).unwrap();
            let b = fs::read(dir2.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name:?} differs");
        }
    }

    #[test]
    fn ten_samples_split_nine_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&tiny_cfg(), 3, dir.path()).unwrap();
        assert_eq!(m.split.train.len(), 9);
        assert_eq!(m.split.val.len(), 1);
    }

    #[test]
    fn four_hundred_samples_split_360_40() {
        // Split arithmetic only; no rendering involved.
        let n = 400usize;
        let val = (n / 10).max(1);
        assert_eq!(val, 40);
        assert_eq!(n - val, 360);
    }

    #[test]
    fn truncated_sample_file_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny_cfg(), 5, dir.path()).unwrap();
        let victim = dir.path().join("sample_3.vtp");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
        let reader = DatasetReader::open(dir.path()).unwrap();
        let err = reader.load_sample(3).unwrap_err();
        assert!(matches!(err, Error::CorruptData { .. }), "{err}");
        assert!(err.to_string().contains("sample_3.vtp"));
    }

    #[test]
    fn unknown_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny_cfg(), 5, dir.path()).unwrap();
        let victim = dir.path().join("sample_0.vtp");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] = b'X';
        fs::write(&victim, &bytes).unwrap();
        let reader = DatasetReader::open(dir.path()).unwrap();
        assert!(matches!(
            reader.load_sample(0),
            Err(Error::CorruptData { .. })
        ));
    }

    #[test]
    fn manifest_with_empty_val_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny_cfg(), 5, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_NAME);
        let text = fs::read_to_string(&mpath).unwrap();
        let mut m: Manifest = serde_json::from_str(&text).unwrap();
        m.split.train.extend(m.split.val.drain(..));
        m.split.train.sort_unstable();
        fs::write(&mpath, serde_json::to_string_pretty(&m).unwrap()).unwrap();
        assert!(matches!(
            DatasetReader::open(dir.path()),
            Err(Error::CorruptData { .. })
        ));
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny_cfg(), 5, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_NAME);
        let text = fs::read_to_string(&mpath).unwrap();
        let mut m: Manifest = serde_json::from_str(&text).unwrap();
        m.format_version = 2;
        fs::write(&mpath, serde_json::to_string_pretty(&m).unwrap()).unwrap();
        assert!(DatasetReader::open(dir.path()).is_err());
    }

    #[test]
    fn too_few_samples_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.num_samples = 9;
        assert!(generate_dataset(&cfg, 5, dir.path()).is_err());
    }

    #[test]
    fn angles_follow_exact_grid() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny_cfg(), 9, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        for s in &ds.samples {
            let n = s.sequence.angles.len();
            for (k, &a) in s.sequence.angles.iter().enumerate() {
                assert_eq!(a, -45.0 + 90.0 * k as f32 / (n - 1) as f32);
            }
        }
    }

    #[test]
    fn target_is_column_mean_and_nadir_lowest_tie() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny_cfg(), 11, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let s = &ds.samples[0];
        let t = s.target();
        for i in 0..NUM_PROPERTIES {
            let mean: f32 =
                s.measurements.iter().map(|r| r[i]).sum::<f32>() / NUM_MEASUREMENTS as f32;
            assert!((t[i] - mean).abs() < 1e-5);
        }
        // 4 views at -45, -15, 15, 45: indices 1 and 2 tie on |angle|;
        // the lowest index wins.
        assert_eq!(s.sequence.nadir_index(), 1);
    }
}
