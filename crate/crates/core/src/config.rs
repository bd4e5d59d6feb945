//! Run configuration shared by every pipeline command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{SimConfig, SECONDS_PER_DAY};
use crate::grf::{GrfParams, DEFAULT_K_REF};
use crate::network::NetworkConfig;
use crate::train::TrainConfig;

/// Random field settings; the seed comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub mean: f64,
    pub variance: f64,
    /// Meters.
    pub correlation_length: f64,
    /// Reference permeability, m².
    pub k_ref: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        let p = GrfParams::default();
        FieldConfig {
            mean: p.mean,
            variance: p.variance,
            correlation_length: p.correlation_length,
            k_ref: DEFAULT_K_REF,
        }
    }
}

impl FieldConfig {
    pub fn params(&self, seed: u64) -> GrfParams {
        GrfParams {
            mean: self.mean,
            variance: self.variance,
            correlation_length: self.correlation_length,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    /// Snapshot days used for training; the others are only evaluated.
    pub train_days: Vec<f64>,
    /// Samples per shard file.
    pub shard_samples: usize,
    /// Days that map to network time 1.
    pub time_scale_days: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqConfig {
    pub realizations: usize,
    /// `(row, col)` pixels where densities are written.
    pub probes: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for generation and Monte Carlo; results do not depend
    /// on it.
    pub threads: usize,
    pub field: FieldConfig,
    pub data: DataConfig,
    pub simulator: SimConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub uq: UqConfig,
    pub io: IoConfig,
}

/// Salts keeping the realization streams of each split disjoint.
pub const TRAIN_STREAM: u64 = 0;
pub const TEST_STREAM: u64 = 1 << 32;
pub const UQ_STREAM: u64 = 2 << 32;

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            field: FieldConfig::default(),
            data: DataConfig {
                train_samples: 128,
                test_samples: 64,
                train_days: vec![100.0, 120.0, 140.0, 160.0, 180.0, 200.0],
                shard_samples: 32,
                time_scale_days: 200.0,
            },
            simulator: SimConfig::desk(),
            network: NetworkConfig::desk(),
            training: TrainConfig::desk(),
            uq: UqConfig {
                realizations: 512,
                probes: vec![(8, 12), (16, 12), (16, 16), (24, 14)],
            },
            io: IoConfig {
                out_dir: PathBuf::from("runs/desk"),
                checkpoint_every: 10,
            },
        }
    }

    /// 50×50 grid, full architecture and hyperparameters, snapshots every
    /// five days between 100 and 200.
    pub fn paper() -> Self {
        let mut simulator = SimConfig::paper();
        simulator.snapshot_times = (0..=20).map(|i| (100.0 + 5.0 * i as f64) * SECONDS_PER_DAY).collect();
        RunConfig {
            data: DataConfig {
                train_samples: 1600,
                test_samples: 500,
                shard_samples: 100,
                ..Self::desk().data
            },
            simulator,
            network: NetworkConfig::paper(),
            training: TrainConfig::paper(),
            uq: UqConfig {
                realizations: 20_000,
                probes: vec![(12, 25), (25, 12), (25, 25), (37, 20)],
            },
            io: IoConfig {
                out_dir: PathBuf::from("runs/paper"),
                checkpoint_every: 10,
            },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }

    /// All snapshot days produced by the simulator.
    pub fn snapshot_days(&self) -> Vec<f64> {
        self.simulator.snapshot_times.iter().map(|s| s / SECONDS_PER_DAY).collect()
    }

    /// Snapshot days absent from training.
    pub fn withheld_days(&self) -> Vec<f64> {
        self.snapshot_days()
            .into_iter()
            .filter(|d| !self.data.train_days.iter().any(|t| same_day(*t, *d)))
            .collect()
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.simulator.validate()?;
        self.network.validate()?;
        self.train_config().validate()?;
        let g = &self.simulator.grid;
        if (self.network.height, self.network.width) != (g.height, g.width) {
            return Err(Error::Config(format!(
                "network input {}x{} does not match the {}x{} grid",
                self.network.height, self.network.width, g.height, g.width
            )));
        }
        if self.network.in_channels != 1 || self.network.out_channels != 3 {
            return Err(Error::Config("network must map 1 input channel to 3 outputs".into()));
        }
        self.field.params(self.seed).validate()?;
        if !(self.field.k_ref > 0.0) {
            return Err(Error::Config("k_ref must be positive".into()));
        }
        let days = self.snapshot_days();
        if self.data.train_days.is_empty()
            || self.data.train_days.iter().any(|t| !days.iter().any(|d| same_day(*t, *d)))
        {
            return Err(Error::Config("train_days must be a non-empty subset of the snapshot days".into()));
        }
        if self.data.shard_samples == 0 || !(self.data.time_scale_days > 0.0) {
            return Err(Error::Config("shard_samples and time_scale_days must be positive".into()));
        }
        if self.uq.probes.iter().any(|&(r, c)| r >= g.height || c >= g.width) {
            return Err(Error::Config("UQ probe outside the grid".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the serialized configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Day values written as decimals compare within a millisecond.
pub fn same_day(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-8
}
