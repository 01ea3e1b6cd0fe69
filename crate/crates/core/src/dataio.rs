//! Dataset plumbing: the `SPFS` tensor container, tab-separated manifests,
//! a synthetic spectral-face generator with the real dataset's class
//! imbalance, and the minority-oversampling rebalancer.
//!
//! Container layout (little endian): magic `SPFS`, version `u16`, then
//! `h, w, c` as `u32`, then `h*w*c` row-major `f32` values. Values are
//! widened to `f64` in memory; the generator emits f32-exact values so that
//! write -> read is the identity on both bytes and in-memory data.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use spfas_autograd::Tensor;

use crate::error::DataError;
use crate::rng::Stream;

pub const MAGIC: [u8; 4] = *b"SPFS";
pub const VERSION: u16 = 1;

/// Spectral band count of the input matrices.
pub const SPECTRAL_BANDS: usize = 30;
/// RGB plane plus spectral bands.
pub const TOTAL_CHANNELS: usize = 33;

/// Number of synthetic identities, spread across both classes.
pub const IDENTITY_COUNT: usize = 20;

// Reference split sizes (full-scale synthetic default).
pub const TRAIN_FAKE: usize = 3380;
pub const TRAIN_REAL: usize = 520;
pub const VAL_FAKE: usize = 728;
pub const VAL_REAL: usize = 208;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// One-hot index: 0 = real, 1 = fake/attack.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn one_hot(self) -> Tensor {
        let mut y = vec![0.0; 2];
        y[self.index()] = 1.0;
        Tensor::new(&[2], y).expect("one-hot")
    }

    pub fn parse(s: &str) -> Result<Self, DataError> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(DataError::UnknownLabel(other.to_string())),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One face record: RGB plane, 30-band spectral matrix, label, identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    pub id: String,
    /// `[h, w, 3]`, values in [0, 1].
    pub rgb: Tensor,
    /// `[h, w, 30]`, values in [0, 1].
    pub spectral: Tensor,
    pub label: Label,
    pub identity_tag: String,
}

impl SpectralSample {
    pub fn height(&self) -> usize {
        self.rgb.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[1]
    }

    /// RGB and spectral planes concatenated along the channel axis: `[h, w, 33]`.
    pub fn concat_channels(&self) -> Tensor {
        let (h, w) = (self.height(), self.width());
        let mut data = vec![0.0; h * w * TOTAL_CHANNELS];
        let rgb = self.rgb.data();
        let spec = self.spectral.data();
        for p in 0..h * w {
            data[p * TOTAL_CHANNELS..p * TOTAL_CHANNELS + 3]
                .copy_from_slice(&rgb[p * 3..p * 3 + 3]);
            data[p * TOTAL_CHANNELS + 3..(p + 1) * TOTAL_CHANNELS]
                .copy_from_slice(&spec[p * SPECTRAL_BANDS..(p + 1) * SPECTRAL_BANDS]);
        }
        Tensor::new(&[h, w, TOTAL_CHANNELS], data).expect("concat shape")
    }

    /// Rebuild a sample from a `[h, w, 33]` tensor (channels 0..3 RGB, 3..33 spectral).
    pub fn from_concat(
        id: String,
        label: Label,
        identity_tag: String,
        x: &Tensor,
    ) -> Result<Self, DataError> {
        let s = x.shape();
        if s.len() != 3 || s[2] != TOTAL_CHANNELS {
            return Err(DataError::ShapeHeaderMismatch {
                path: PathBuf::from(&id),
                expected: vec![0, 0, TOTAL_CHANNELS],
                got: s.to_vec(),
            });
        }
        let (h, w) = (s[0], s[1]);
        let mut rgb = vec![0.0; h * w * 3];
        let mut spec = vec![0.0; h * w * SPECTRAL_BANDS];
        let data = x.data();
        for p in 0..h * w {
            rgb[p * 3..p * 3 + 3].copy_from_slice(&data[p * TOTAL_CHANNELS..p * TOTAL_CHANNELS + 3]);
            spec[p * SPECTRAL_BANDS..(p + 1) * SPECTRAL_BANDS]
                .copy_from_slice(&data[p * TOTAL_CHANNELS + 3..(p + 1) * TOTAL_CHANNELS]);
        }
        Ok(SpectralSample {
            id,
            rgb: Tensor::new(&[h, w, 3], rgb).expect("rgb shape"),
            spectral: Tensor::new(&[h, w, SPECTRAL_BANDS], spec).expect("spectral shape"),
            label,
            identity_tag,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Path relative to the manifest file's directory.
    pub rel_path: String,
    pub label: Label,
    pub identity_tag: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct ids present for a label (duplicates from oversampling collapse).
    pub fn distinct_ids(&self, label: Label) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.id.as_str())
            .collect()
    }
}

// ── container I/O ────────────────────────────────────────────────────────

/// Write a rank-3 tensor as an `SPFS` container.
pub fn write_container(path: &Path, t: &Tensor) -> Result<(), DataError> {
    let s = t.shape();
    assert_eq!(s.len(), 3, "container stores rank-3 tensors");
    let mut buf = Vec::with_capacity(18 + t.numel() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in s {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| DataError::Io(path.to_path_buf(), e))
}

/// Read an `SPFS` container back into a rank-3 tensor (f32 widened to f64).
pub fn read_container(path: &Path) -> Result<Tensor, DataError> {
    let mut file = fs::File::open(path).map_err(|e| DataError::Io(path.to_path_buf(), e))?;
    let mut header = [0u8; 18];
    file.read_exact(&mut header)
        .map_err(|_| DataError::Truncated {
            path: path.to_path_buf(),
            expected: 18,
            got: fs::metadata(path).map(|m| m.len() as usize).unwrap_or(0),
        })?;
    if header[0..4] != MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: [header[0], header[1], header[2], header[3]],
        });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| {
            u32::from_le_bytes([
                header[6 + i * 4],
                header[7 + i * 4],
                header[8 + i * 4],
                header[9 + i * 4],
            ]) as usize
        })
        .collect();
    let numel: usize = dims.iter().product();
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| DataError::Io(path.to_path_buf(), e))?;
    if payload.len() != numel * 4 {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: numel * 4,
            got: payload.len(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Tensor::new(&dims, data).map_err(|_| DataError::ShapeHeaderMismatch {
        path: path.to_path_buf(),
        expected: vec![],
        got: dims,
    })
}

/// Write a sample as a 33-channel container at `dir/rel_path`.
pub fn save_sample(dir: &Path, entry: &ManifestEntry, sample: &SpectralSample) -> Result<(), DataError> {
    write_container(&dir.join(&entry.rel_path), &sample.concat_channels())
}

/// Load the sample a manifest entry points at; `dir` is the manifest's directory.
pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<SpectralSample, DataError> {
    let t = read_container(&dir.join(&entry.rel_path))?;
    SpectralSample::from_concat(
        entry.id.clone(),
        entry.label,
        entry.identity_tag.clone(),
        &t,
    )
}

// ── manifest I/O ─────────────────────────────────────────────────────────

/// `id<TAB>relative_path<TAB>label<TAB>identity_tag`, one entry per line.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DataError> {
    let mut out = String::new();
    for e in &manifest.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.id, e.rel_path, e.label, e.identity_tag
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::Io(path.to_path_buf(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| DataError::Io(path.to_path_buf(), e))
}

pub fn read_manifest(path: &Path, split: Split) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::Io(path.to_path_buf(), e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DataError::ManifestParse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            rel_path: fields[1].to_string(),
            label: Label::parse(fields[2]).map_err(|e| DataError::ManifestParse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?,
            identity_tag: fields[3].to_string(),
        });
    }
    if entries.is_empty() {
        return Err(DataError::EmptyManifest);
    }
    Ok(DatasetManifest { split, entries })
}

// ── synthetic generator ──────────────────────────────────────────────────

/// Smooth 30-band reflectance curves; the two class families are separated
/// by a wide margin so mean spectra stay linearly separable after noise.
fn class_curve(label: Label, band: usize) -> f64 {
    let c = band as f64;
    match label {
        Label::Real => 0.62 + 0.18 * (-(c - 9.0) * (c - 9.0) / 50.0).exp(),
        Label::Fake => 0.38 + 0.18 * (-(c - 21.0) * (c - 21.0) / 50.0).exp(),
    }
}

fn quantize(v: f64) -> f64 {
    v.clamp(0.0, 1.0) as f32 as f64
}

struct IdentityProfile {
    spectral_amp: f64,
    spectral_phase: f64,
    rgb_freq: [f64; 2],
    rgb_phase: [f64; 2],
    rgb_tint: [f64; 3],
}

fn identity_profile(seed: u64, identity: usize) -> IdentityProfile {
    let mut s = Stream::derive(seed, &[0x1d, identity as u64]);
    IdentityProfile {
        spectral_amp: s.range(0.0, 0.02),
        spectral_phase: s.range(0.0, std::f64::consts::TAU),
        rgb_freq: [s.range(1.0, 3.0), s.range(1.0, 3.0)],
        rgb_phase: [
            s.range(0.0, std::f64::consts::TAU),
            s.range(0.0, std::f64::consts::TAU),
        ],
        rgb_tint: [s.range(-0.15, 0.15), s.range(-0.15, 0.15), s.range(-0.15, 0.15)],
    }
}

fn synth_sample(
    seed: u64,
    split: Split,
    label: Label,
    index: usize,
    h: usize,
    w: usize,
) -> SpectralSample {
    let identity = index % IDENTITY_COUNT;
    let profile = identity_profile(seed, identity);
    let split_tag = match split {
        Split::Train => 1u64,
        Split::Val => 2,
        Split::Test => 3,
    };
    let mut s = Stream::derive(seed, &[0x5a, split_tag, label.index() as u64, index as u64]);

    // Per-sample band offset, shared across pixels of one band.
    let band_offset: Vec<f64> = (0..SPECTRAL_BANDS).map(|_| s.range(-0.015, 0.015)).collect();
    let id_offset: Vec<f64> = (0..SPECTRAL_BANDS)
        .map(|c| {
            profile.spectral_amp
                * (std::f64::consts::TAU * c as f64 / SPECTRAL_BANDS as f64 + profile.spectral_phase)
                    .sin()
        })
        .collect();

    let (ch, cw) = (h as f64 / 2.0, w as f64 / 2.0);
    let sigma = 0.35 * h.min(w) as f64;
    let mut rgb = vec![0.0; h * w * 3];
    let mut spectral = vec![0.0; h * w * SPECTRAL_BANDS];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let dr = r as f64 + 0.5 - ch;
            let dc = c as f64 + 0.5 - cw;
            // Face-like radial gain: brighter center, dimmer border.
            let gain = 0.85 + 0.3 * (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
            let u = r as f64 / h as f64;
            let v = c as f64 / w as f64;
            let pattern = 0.5
                + 0.25
                    * (std::f64::consts::TAU * profile.rgb_freq[0] * u + profile.rgb_phase[0]).sin()
                    * (std::f64::consts::TAU * profile.rgb_freq[1] * v + profile.rgb_phase[1]).cos();
            for ch_i in 0..3 {
                let jitter = s.range(-0.03, 0.03);
                rgb[p * 3 + ch_i] = quantize(pattern + profile.rgb_tint[ch_i] + jitter);
            }
            for band in 0..SPECTRAL_BANDS {
                let noise = s.range(-0.015, 0.015);
                spectral[p * SPECTRAL_BANDS + band] = quantize(
                    class_curve(label, band) * gain + id_offset[band] + band_offset[band] + noise,
                );
            }
        }
    }
    SpectralSample {
        id: format!("{split}_{label}_{index:05}"),
        rgb: Tensor::new(&[h, w, 3], rgb).expect("rgb"),
        spectral: Tensor::new(&[h, w, SPECTRAL_BANDS], spectral).expect("spectral"),
        label,
        identity_tag: format!("id{identity:02}"),
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub root: PathBuf,
    pub train: DatasetManifest,
    pub val: DatasetManifest,
}

fn scaled(count: usize, scale: f64) -> usize {
    ((count as f64 * scale).round() as usize).max(1)
}

/// Per-split class counts at a given scale: ((train fake, train real),
/// (val fake, val real)). Scale 1.0 reproduces the reference split sizes.
pub fn scaled_counts(scale: f64) -> ((usize, usize), (usize, usize)) {
    (
        (scaled(TRAIN_FAKE, scale), scaled(TRAIN_REAL, scale)),
        (scaled(VAL_FAKE, scale), scaled(VAL_REAL, scale)),
    )
}

/// Generate the synthetic dataset under `out_dir`: sample containers in
/// `data/`, manifests at `train.tsv` and `val.tsv`. Counts follow the
/// 6.5:1 train and 3.5:1 val fake:real ratios, scaled by `scale`.
/// Identical seeds yield byte-identical files.
pub fn generate_synthetic(
    out_dir: &Path,
    seed: u64,
    scale: f64,
    h: usize,
    w: usize,
) -> Result<GeneratedDataset, DataError> {
    if !(scale > 0.0 && scale <= 1.0) || !scale.is_finite() {
        return Err(DataError::InvalidScale(scale));
    }
    if h < 16 || w < 16 {
        return Err(DataError::InvalidDims { h, w });
    }
    let data_dir = out_dir.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| DataError::Io(data_dir.clone(), e))?;

    let specs = [
        (Split::Train, Label::Fake, scaled(TRAIN_FAKE, scale)),
        (Split::Train, Label::Real, scaled(TRAIN_REAL, scale)),
        (Split::Val, Label::Fake, scaled(VAL_FAKE, scale)),
        (Split::Val, Label::Real, scaled(VAL_REAL, scale)),
    ];
    let mut train_entries = Vec::new();
    let mut val_entries = Vec::new();
    for (split, label, count) in specs {
        for index in 0..count {
            let sample = synth_sample(seed, split, label, index, h, w);
            let entry = ManifestEntry {
                id: sample.id.clone(),
                rel_path: format!("data/{}.spfs", sample.id),
                label,
                identity_tag: sample.identity_tag.clone(),
            };
            save_sample(out_dir, &entry, &sample)?;
            match split {
                Split::Train => train_entries.push(entry),
                _ => val_entries.push(entry),
            }
        }
    }
    let train = DatasetManifest {
        split: Split::Train,
        entries: train_entries,
    };
    let val = DatasetManifest {
        split: Split::Val,
        entries: val_entries,
    };
    write_manifest(&out_dir.join("train.tsv"), &train)?;
    write_manifest(&out_dir.join("val.tsv"), &val)?;
    Ok(GeneratedDataset {
        root: out_dir.to_path_buf(),
        train,
        val,
    })
}

// ── oversampling ─────────────────────────────────────────────────────────

/// Rebalance class counts by duplicating minority entries: whole cycles
/// first, then a seeded random remainder of distinct entries. Majority
/// entries and original order are untouched; duplicates are appended.
pub fn oversample_balance(
    manifest: &DatasetManifest,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let n_real = manifest.count(Label::Real);
    let n_fake = manifest.count(Label::Fake);
    if n_real == 0 || n_fake == 0 {
        return Err(DataError::SingleClassManifest);
    }
    if n_real == n_fake {
        return Ok(manifest.clone());
    }
    let (minority, n_min, n_maj) = if n_real < n_fake {
        (Label::Real, n_real, n_fake)
    } else {
        (Label::Fake, n_fake, n_real)
    };
    let minority_entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.label == minority)
        .collect();

    let mut entries = manifest.entries.clone();
    let full_cycles = n_maj / n_min; // original copy counts as cycle one
    for _ in 1..full_cycles {
        entries.extend(minority_entries.iter().map(|e| (*e).clone()));
    }
    let remainder = n_maj - full_cycles * n_min;
    if remainder > 0 {
        let mut order: Vec<usize> = (0..n_min).collect();
        Stream::derive(seed, &[0x0b]).shuffle(&mut order);
        entries.extend(order[..remainder].iter().map(|&i| minority_entries[i].clone()));
    }
    Ok(DatasetManifest {
        split: manifest.split,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("spfas_dataio_{tag}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn toy_manifest(fake: usize, real: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..fake {
            entries.push(ManifestEntry {
                id: format!("f{i}"),
                rel_path: format!("f{i}.spfs"),
                label: Label::Fake,
                identity_tag: format!("id{:02}", i % 5),
            });
        }
        for i in 0..real {
            entries.push(ManifestEntry {
                id: format!("r{i}"),
                rel_path: format!("r{i}.spfs"),
                label: Label::Real,
                identity_tag: format!("id{:02}", i % 5),
            });
        }
        DatasetManifest {
            split: Split::Train,
            entries,
        }
    }

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let dir = tmpdir("roundtrip");
        let t = Tensor::from_fn(&[4, 5, 3], |i| quantize((i as f64 * 0.37).sin().abs()));
        let path = dir.join("t.spfs");
        write_container(&path, &t).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(t, back);
        // bytes identical after rewrite
        let original = fs::read(&path).unwrap();
        write_container(&path, &back).unwrap();
        assert_eq!(original, fs::read(&path).unwrap());
    }

    #[test]
    fn container_rejects_bad_magic_and_truncation() {
        let dir = tmpdir("badfiles");
        let t = Tensor::zeros(&[2, 2, 3]);
        let path = dir.join("t.spfs");
        write_container(&path, &t).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.join("bad.spfs");
        fs::write(&bad, &bytes).unwrap();
        assert!(matches!(
            read_container(&bad).unwrap_err(),
            DataError::BadMagic { .. }
        ));

        let trunc = dir.join("trunc.spfs");
        let original = fs::read(&path).unwrap();
        fs::write(&trunc, &original[..original.len() - 5]).unwrap();
        assert!(matches!(
            read_container(&trunc).unwrap_err(),
            DataError::Truncated { .. }
        ));
    }

    #[test]
    fn sample_roundtrip_through_disk() {
        let dir = tmpdir("sample");
        let sample = synth_sample(7, Split::Train, Label::Real, 3, 16, 16);
        assert!(sample.rgb.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(sample.spectral.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let entry = ManifestEntry {
            id: sample.id.clone(),
            rel_path: "s.spfs".into(),
            label: sample.label,
            identity_tag: sample.identity_tag.clone(),
        };
        save_sample(&dir, &entry, &sample).unwrap();
        let back = load_sample(&dir, &entry).unwrap();
        assert_eq!(sample, back);
    }

    #[test]
    fn generator_counts_match_reference_ratios() {
        let dir = tmpdir("counts");
        let ds = generate_synthetic(&dir, 5, 0.02, 16, 16).unwrap();
        assert_eq!(ds.train.count(Label::Fake), 68); // 3380 * 0.02 rounded
        assert_eq!(ds.train.count(Label::Real), 10);
        assert_eq!(ds.val.count(Label::Fake), 15);
        assert_eq!(ds.val.count(Label::Real), 4);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn scaled_counts_reproduce_reference_split() {
        // full scale: 3900 train (3380 fake / 520 real), 936 val (728 / 208)
        let ((tf, tr), (vf, vr)) = scaled_counts(1.0);
        assert_eq!((tf, tr), (3380, 520));
        assert_eq!(tf + tr, 3900);
        assert_eq!((vf, vr), (728, 208));
        assert_eq!(vf + vr, 936);
        // tenth scale
        let ((tf, tr), (vf, vr)) = scaled_counts(0.1);
        assert_eq!((tf, tr), (338, 52));
        assert_eq!((vf, vr), (73, 21));
    }

    #[test]
    fn container_rejects_unknown_version() {
        let dir = tmpdir("version");
        let path = dir.join("t.spfs");
        write_container(&path, &Tensor::zeros(&[2, 2, 3])).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9; // version low byte
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_container(&path).unwrap_err(),
            DataError::UnsupportedVersion { version: 9, .. }
        ));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn load_sample_rejects_wrong_channel_count() {
        let dir = tmpdir("channels");
        let entry = ManifestEntry {
            id: "bad".into(),
            rel_path: "bad.spfs".into(),
            label: Label::Real,
            identity_tag: "id00".into(),
        };
        write_container(&dir.join("bad.spfs"), &Tensor::zeros(&[4, 4, 5])).unwrap();
        assert!(matches!(
            load_sample(&dir, &entry).unwrap_err(),
            DataError::ShapeHeaderMismatch { .. }
        ));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn generator_is_deterministic() {
        let d1 = tmpdir("det1");
        let d2 = tmpdir("det2");
        generate_synthetic(&d1, 11, 0.01, 16, 16).unwrap();
        generate_synthetic(&d2, 11, 0.01, 16, 16).unwrap();
        let m1 = fs::read(d1.join("train.tsv")).unwrap();
        let m2 = fs::read(d2.join("train.tsv")).unwrap();
        assert_eq!(m1, m2);
        let ds = read_manifest(&d1.join("train.tsv"), Split::Train).unwrap();
        for e in &ds.entries {
            let b1 = fs::read(d1.join(&e.rel_path)).unwrap();
            let b2 = fs::read(d2.join(&e.rel_path)).unwrap();
            assert_eq!(b1, b2, "bytes differ for {}", e.id);
        }
        let _ = fs::remove_dir_all(&d1);
        let _ = fs::remove_dir_all(&d2);
    }

    #[test]
    fn generator_rejects_bad_args() {
        let dir = tmpdir("badargs");
        assert!(matches!(
            generate_synthetic(&dir, 1, 0.0, 16, 16).unwrap_err(),
            DataError::InvalidScale(_)
        ));
        assert!(matches!(
            generate_synthetic(&dir, 1, 0.5, 8, 16).unwrap_err(),
            DataError::InvalidDims { .. }
        ));
    }

    #[test]
    fn identities_span_both_classes() {
        let dir = tmpdir("ids");
        let ds = generate_synthetic(&dir, 3, 0.01, 16, 16).unwrap();
        let real_ids = ds.train.distinct_ids(Label::Real);
        let real_tags: BTreeSet<&str> = ds
            .train
            .entries
            .iter()
            .filter(|e| e.label == Label::Real)
            .map(|e| e.identity_tag.as_str())
            .collect();
        let fake_tags: BTreeSet<&str> = ds
            .train
            .entries
            .iter()
            .filter(|e| e.label == Label::Fake)
            .map(|e| e.identity_tag.as_str())
            .collect();
        assert!(!real_ids.is_empty());
        assert!(real_tags.iter().all(|t| fake_tags.contains(t)));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn mean_spectra_are_linearly_separable() {
        let dir = tmpdir("sep");
        let ds = generate_synthetic(&dir, 23, 0.01, 16, 16).unwrap();
        let direction: Vec<f64> = (0..SPECTRAL_BANDS)
            .map(|c| class_curve(Label::Real, c) - class_curve(Label::Fake, c))
            .collect();
        let mut worst_real = f64::INFINITY;
        let mut best_fake = f64::NEG_INFINITY;
        for e in &ds.train.entries {
            let s = load_sample(&dir, e).unwrap();
            let pixels = (s.height() * s.width()) as f64;
            let mut mean = vec![0.0; SPECTRAL_BANDS];
            for (i, v) in s.spectral.data().iter().enumerate() {
                mean[i % SPECTRAL_BANDS] += v / pixels;
            }
            let proj: f64 = mean.iter().zip(&direction).map(|(m, d)| m * d).sum();
            match e.label {
                Label::Real => worst_real = worst_real.min(proj),
                Label::Fake => best_fake = best_fake.max(proj),
            }
        }
        assert!(
            worst_real > best_fake,
            "projections overlap: real {worst_real} vs fake {best_fake}"
        );
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn oversample_balances_reference_counts() {
        let m = toy_manifest(3380, 520);
        let b = oversample_balance(&m, 9).unwrap();
        assert_eq!(b.count(Label::Real), 3380);
        assert_eq!(b.count(Label::Fake), 3380);
        // each real appears 6 or 7 times: 3380 = 6*520 + 260
        let mut copies = std::collections::HashMap::new();
        for e in b.entries.iter().filter(|e| e.label == Label::Real) {
            *copies.entry(e.id.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(copies.len(), 520);
        assert!(copies.values().all(|&c| c == 6 || c == 7));
        assert_eq!(copies.values().filter(|&&c| c == 7).count(), 260);
        assert_eq!(b.distinct_ids(Label::Real), m.distinct_ids(Label::Real));
    }

    #[test]
    fn oversample_exact_cycle_and_identity_cases() {
        let m = toy_manifest(10, 5);
        let b = oversample_balance(&m, 1).unwrap();
        assert_eq!(b.count(Label::Real), 10);
        for id in 0..5 {
            let copies = b
                .entries
                .iter()
                .filter(|e| e.id == format!("r{id}"))
                .count();
            assert_eq!(copies, 2);
        }
        let balanced = toy_manifest(4, 4);
        let same = oversample_balance(&balanced, 1).unwrap();
        assert_eq!(same.entries, balanced.entries);
    }

    #[test]
    fn oversample_rejects_single_class() {
        let m = toy_manifest(5, 0);
        assert!(matches!(
            oversample_balance(&m, 1).unwrap_err(),
            DataError::SingleClassManifest
        ));
    }

    #[test]
    fn concat_has_33_channels_and_splits_back() {
        let sample = synth_sample(1, Split::Val, Label::Fake, 0, 16, 16);
        let x = sample.concat_channels();
        assert_eq!(x.shape(), &[16, 16, 33]);
        let back =
            SpectralSample::from_concat(sample.id.clone(), sample.label, sample.identity_tag.clone(), &x)
                .unwrap();
        assert_eq!(back, sample);
    }
}
