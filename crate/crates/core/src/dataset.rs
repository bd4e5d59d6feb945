//! On-disk datasets: little-endian f32 shards plus a TOML manifest.
//!
//! Input shards hold one `[1, H, W]` log-permeability record per sample.
//! Output shards hold one `[3, H, W]` record (P′, Sg, ζ) per sample and
//! snapshot, sample-major, so record `m = i·n_t + j`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{same_day, RunConfig, TEST_STREAM, TRAIN_STREAM};
use crate::error::{Error, Result};
use crate::flow::{simulate, Snapshot, INITIAL_PRESSURE};
use crate::grf::{GrfSampler, PermeabilityField};
use crate::tensor::Tensor;
use crate::train::{TrainingData, BINARIZE_THRESHOLD};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn stream_offset(self) -> u64 {
        match self {
            Split::Train => TRAIN_STREAM,
            Split::Test => TEST_STREAM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub name: String,
    pub unit: String,
}

/// How stored values relate to physical ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    /// `P′ = P / pressure_scale − pressure_offset`
    pub pressure_scale: f64,
    pub pressure_offset: f64,
    pub saturation_min: f64,
    pub saturation_max: f64,
    pub binarize_threshold: f64,
    /// Network time is `day / time_scale_days`.
    pub time_scale_days: f64,
    /// Reference permeability in m²; inputs store `ln(k / k_ref)`.
    pub k_ref: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShardKind {
    Inputs,
    Outputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardEntry {
    pub file: String,
    pub kind: ShardKind,
    pub first_sample: usize,
    pub samples: usize,
    /// Bytes per record.
    pub record_bytes: usize,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub times_days: Vec<f64>,
    pub input_channels: Vec<Channel>,
    pub output_channels: Vec<Channel>,
    pub normalization: Normalization,
    pub config_hash: String,
    pub seed: u64,
    /// Random-field stream of each stored sample, in order.
    pub streams: Vec<u64>,
    pub shards: Vec<ShardEntry>,
}

impl DatasetManifest {
    pub fn records(&self) -> usize {
        self.samples * self.times_days.len()
    }

    /// `(sample, time index)` of record `m`.
    pub fn resolve(&self, m: usize) -> Option<(usize, usize)> {
        let nt = self.times_days.len();
        (m < self.records()).then(|| (m / nt, m % nt))
    }

    /// Shard file and byte offset of record `m` of `kind`.
    pub fn locate(&self, kind: ShardKind, m: usize) -> Option<(&ShardEntry, usize)> {
        let (sample, j) = self.resolve(if kind == ShardKind::Inputs {
            m * self.times_days.len()
        } else {
            m
        })?;
        let shard = self
            .shards
            .iter()
            .find(|s| s.kind == kind && (s.first_sample..s.first_sample + s.samples).contains(&sample))?;
        let local = match kind {
            ShardKind::Inputs => sample - shard.first_sample,
            ShardKind::Outputs => (sample - shard.first_sample) * self.times_days.len() + j,
        };
        Some((shard, local * shard.record_bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported dataset format {}", m.format_version)));
        }
        if m.streams.len() != m.samples {
            return Err(Error::Data("manifest stream list does not match the sample count".into()));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn bytes_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Data("byte length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// One simulated sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub stream: u64,
    pub field: PermeabilityField,
    pub snapshots: Vec<Snapshot>,
}

/// Sample and simulate realizations `streams` on `threads` workers, in
/// order. Failed simulations are logged and dropped.
pub fn simulate_samples(config: &RunConfig, sampler: &GrfSampler, streams: &[u64]) -> Vec<Sample> {
    let run = |part: &[u64]| -> Vec<Option<Sample>> {
        part.iter()
            .map(|&stream| {
                let field = sampler.sample(config.seed, stream, config.field.k_ref);
                match simulate(&field, &config.simulator) {
                    Ok(snapshots) => Some(Sample {
                        stream,
                        field,
                        snapshots,
                    }),
                    Err(e) => {
                        log::warn!("realization stream {stream} failed: {e}");
                        None
                    }
                }
            })
            .collect()
    };
    let threads = config.threads.max(1).min(streams.len().max(1));
    let results: Vec<Option<Sample>> = if threads == 1 {
        run(streams)
    } else {
        let chunk = streams.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = streams.chunks(chunk).map(|p| scope.spawn(move || run(p))).collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    results.into_iter().flatten().collect()
}

fn channels() -> (Vec<Channel>, Vec<Channel>) {
    let ch = |n: &str, u: &str| Channel {
        name: n.into(),
        unit: u.into(),
    };
    (
        vec![ch("log_permeability", "ln(k/k_ref)")],
        vec![ch("pressure", "rescaled"), ch("saturation", "fraction"), ch("front_mask", "binary")],
    )
}

/// Simulate a split and write its shards and manifest into `dir`.
pub fn generate_split(config: &RunConfig, split: Split, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let n = match split {
        Split::Train => config.data.train_samples,
        Split::Test => config.data.test_samples,
    };
    let grid = config.simulator.grid;
    let sampler = GrfSampler::new(grid, config.field.params(config.seed))?;
    let streams: Vec<u64> = (0..n as u64).map(|i| split.stream_offset() + i).collect();
    let (input_channels, output_channels) = channels();
    let plane = grid.height * grid.width;
    let mut manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        split,
        height: grid.height,
        width: grid.width,
        samples: 0,
        times_days: config.snapshot_days(),
        input_channels,
        output_channels,
        normalization: Normalization {
            pressure_scale: 1e7,
            pressure_offset: INITIAL_PRESSURE / 1e7,
            saturation_min: 0.0,
            saturation_max: 1.0 - config.simulator.residual_resident,
            binarize_threshold: BINARIZE_THRESHOLD,
            time_scale_days: config.data.time_scale_days,
            k_ref: config.field.k_ref,
        },
        config_hash: config.hash(),
        seed: config.seed,
        streams: Vec::new(),
        shards: Vec::new(),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (si, chunk) in streams.chunks(config.data.shard_samples).enumerate() {
        let samples = simulate_samples(config, &sampler, chunk);
        if samples.is_empty() {
            continue;
        }
        let first = manifest.samples;
        let inputs = f32_bytes(samples.iter().flat_map(|s| s.field.log_values.data().iter().map(|&v| v as f32)));
        let outputs = f32_bytes(samples.iter().flat_map(|s| {
            s.snapshots.iter().flat_map(|snap| {
                snap.rescaled_pressure
                    .data()
                    .iter()
                    .chain(snap.saturation.data())
                    .chain(snap.mask.data())
                    .map(|&v| v as f32)
            })
        }));
        for (kind, bytes, per) in [
            (ShardKind::Inputs, inputs, plane * 4),
            (ShardKind::Outputs, outputs, 3 * plane * 4),
        ] {
            let file = format!("{}-{}-{si:04}.f32", split.name(), if kind == ShardKind::Inputs { "x" } else { "y" });
            write_file(&dir.join(&file), &bytes)?;
            manifest.shards.push(ShardEntry {
                file,
                kind,
                first_sample: first,
                samples: samples.len(),
                record_bytes: per,
                bytes: bytes.len(),
                sha256: sha256_hex(&bytes),
            });
        }
        manifest.samples += samples.len();
        manifest.streams.extend(samples.iter().map(|s| s.stream));
        log::info!("{}: {} / {n} samples", split.name(), manifest.samples);
    }
    if manifest.samples < n {
        log::warn!("{}: {} of {n} samples completed", split.name(), manifest.samples);
    }
    write_file(&dir.join(MANIFEST_FILE), manifest.to_toml().as_bytes())?;
    write_file(&dir.join("config.toml"), config.to_toml().as_bytes())?;
    Ok(manifest)
}

/// A dataset read back from disk with every checksum verified.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    /// `[N, 1, H, W]`
    pub inputs: Tensor<f32>,
    /// `[N·n_t, 3, H, W]`
    pub outputs: Tensor<f32>,
}

/// Check every shard against the manifest without loading the data.
pub fn verify(dir: &Path) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::from_toml(
        &fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?,
    )?;
    for s in &manifest.shards {
        let path = dir.join(&s.file);
        let bytes = read_file(&path)?;
        let actual = sha256_hex(&bytes);
        if actual != s.sha256 || bytes.len() != s.bytes {
            return Err(Error::Checksum {
                path,
                expected: s.sha256.clone(),
                actual,
            });
        }
    }
    Ok(manifest)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = verify(dir)?;
        let (h, w, nt) = (manifest.height, manifest.width, manifest.times_days.len());
        let mut xs = Vec::with_capacity(manifest.samples * h * w);
        let mut ys = Vec::with_capacity(manifest.records() * 3 * h * w);
        let mut next = [0usize, 0usize];
        for s in &manifest.shards {
            let data = bytes_f32(&read_file(&dir.join(&s.file))?)?;
            let (slot, target, record, per) = match s.kind {
                ShardKind::Inputs => (0, &mut xs, h * w, h * w),
                ShardKind::Outputs => (1, &mut ys, 3 * h * w, 3 * h * w * nt),
            };
            if s.first_sample != next[slot] || data.len() != s.samples * per || s.record_bytes != record * 4 {
                return Err(Error::Data(format!("shard {} is inconsistent with the manifest", s.file)));
            }
            next[slot] += s.samples;
            target.extend(data);
        }
        if next != [manifest.samples, manifest.samples] {
            return Err(Error::Data("shards do not cover every sample".into()));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            inputs: Tensor::from_vec(&[manifest.samples, 1, h, w], xs)?,
            outputs: Tensor::from_vec(&[manifest.records(), 3, h, w], ys)?,
            manifest,
        })
    }

    /// Indices of `days` within the stored snapshots.
    pub fn time_indices(&self, days: &[f64]) -> Result<Vec<usize>> {
        days.iter()
            .map(|d| {
                self.manifest
                    .times_days
                    .iter()
                    .position(|t| same_day(*t, *d))
                    .ok_or_else(|| Error::Data(format!("day {d} is not stored in the dataset")))
            })
            .collect()
    }

    /// Records at the given days, in the layout the trainer expects.
    pub fn training_data(&self, days: &[f64]) -> Result<TrainingData<f32>> {
        let idx = self.time_indices(days)?;
        let (h, w) = (self.manifest.height, self.manifest.width);
        let plane = h * w;
        let nt = self.manifest.times_days.len();
        let mut targets = Vec::with_capacity(self.manifest.samples * idx.len() * 2 * plane);
        let mut masks = Vec::with_capacity(self.manifest.samples * idx.len() * plane);
        for i in 0..self.manifest.samples {
            for &j in &idx {
                let rec = self.outputs.outer(i * nt + j);
                targets.extend_from_slice(&rec[..2 * plane]);
                masks.extend_from_slice(&rec[2 * plane..]);
            }
        }
        let n = self.manifest.samples * idx.len();
        TrainingData::new(
            self.inputs.clone(),
            days.iter().map(|d| d / self.manifest.normalization.time_scale_days).collect(),
            Tensor::from_vec(&[n, 2, h, w], targets)?,
            Tensor::from_vec(&[n, 1, h, w], masks)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::GridSpec;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::desk();
        c.simulator.grid = GridSpec::new(8, 8, 10.0).unwrap();
        c.network = crate::network::NetworkConfig::tiny();
        c.data.train_samples = 4;
        c.data.test_samples = 3;
        c.data.shard_samples = 3;
        c.uq.probes = vec![(4, 4)];
        c
    }

    #[test]
    fn manifest_resolves_records() {
        let dir = tempfile::tempdir().unwrap();
        let c = small_config();
        let m = generate_split(&c, Split::Train, dir.path()).unwrap();
        assert_eq!(m.times_days.len(), 7);
        assert_eq!(m.records(), 28);
        assert_eq!(m.resolve(27), Some((3, 6)));
        assert_eq!(m.resolve(28), None);
        let (shard, offset) = m.locate(ShardKind::Outputs, 27).unwrap();
        assert_eq!(shard.first_sample, 3);
        assert_eq!(offset, 6 * 3 * 64 * 4);
        let d = Dataset::load(dir.path()).unwrap();
        assert_eq!(d.outputs.shape(), &[28, 3, 8, 8]);
        // record m from the byte offset equals the flattened tensor row
        let bytes = read_file(&dir.path().join(&shard.file)).unwrap();
        let rec = bytes_f32(&bytes[offset..offset + shard.record_bytes]).unwrap();
        assert_eq!(rec, d.outputs.outer(27));
        let td = d.training_data(&c.data.train_days).unwrap();
        assert_eq!(td.len(), 24);
        assert_eq!(td.times[5], 1.0);
    }

    #[test]
    fn regeneration_is_bit_identical_and_splits_differ() {
        let c = small_config();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_split(&c, Split::Train, a.path()).unwrap();
        let mb = generate_split(&c, Split::Train, b.path()).unwrap();
        assert_eq!(ma, mb);
        let t = generate_split(&c, Split::Test, b.path()).unwrap();
        assert_ne!(t.shards[0].sha256, ma.shards[0].sha256);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_split(&small_config(), Split::Test, dir.path()).unwrap();
        let path = dir.path().join(&m.shards[1].file);
        let mut bytes = read_file(&path).unwrap();
        bytes[17] ^= 0x40;
        write_file(&path, &bytes).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::Checksum { .. })));
    }
}
