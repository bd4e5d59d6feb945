//! Checkpoints: a TOML header, a `---` line, then little-endian f32 data.
//!
//! The header names every stored tensor with its shape and float offset.
//! Optimizer moments, scheduler state and the training record are stored
//! when the checkpoint was written from a [`Trainer`], so training resumes
//! exactly where it stopped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{bytes_f32, read_file, sha256_hex, write_file};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::tensor::{Real, Tensor};
use crate::train::{AdamState, Objective, PlateauScheduler, TrainConfig, TrainRecord, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;
const SEPARATOR: &[u8] = b"\n---\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in floats from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub config: TrainConfig,
    pub seed: u64,
    pub objectives: Vec<Objective>,
    pub lr: f64,
    pub adam_step: u64,
    pub scheduler_best: f64,
    pub scheduler_bad_epochs: usize,
    pub scheduler_min_lr: f64,
    /// Training record as CSV.
    pub record: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub network: NetworkConfig,
    pub bn_momentum: f64,
    pub config_hash: Option<String>,
    pub data_sha256: String,
    pub tensors: Vec<TensorEntry>,
    pub train: Option<TrainState>,
}

struct Writer {
    entries: Vec<TensorEntry>,
    data: Vec<f32>,
}

impl Writer {
    fn push<T: Real>(&mut self, name: String, t: &Tensor<T>) {
        self.entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: self.data.len(),
        });
        self.data.extend(t.data().iter().map(|v| v.as_f64() as f32));
    }
}

fn encode(mut header: CheckpointHeader, w: Writer) -> Vec<u8> {
    let payload = crate::dataset::f32_bytes(w.data);
    header.tensors = w.entries;
    header.data_sha256 = sha256_hex(&payload);
    let mut out = toml::to_string(&header).expect("checkpoint header serializes").into_bytes();
    out.extend_from_slice(SEPARATOR);
    out.extend_from_slice(&payload);
    out
}

fn network_tensors<T: Real>(net: &Network<T>, w: &mut Writer) {
    for p in &net.state.params {
        w.push(format!("param/{}", p.name), &p.value);
    }
    for (name, s) in &net.state.running {
        w.push(format!("running_mean/{name}"), &s.mean);
        w.push(format!("running_var/{name}"), &s.var);
    }
}

fn header_for<T: Real>(net: &Network<T>, config_hash: Option<&str>) -> CheckpointHeader {
    CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        network: net.config().clone(),
        bn_momentum: net.state.bn_momentum,
        config_hash: config_hash.map(str::to_owned),
        data_sha256: String::new(),
        tensors: Vec::new(),
        train: None,
    }
}

/// Serialize network weights and batch-norm statistics.
pub fn encode_network<T: Real>(net: &Network<T>, config_hash: Option<&str>) -> Vec<u8> {
    let mut w = Writer {
        entries: Vec::new(),
        data: Vec::new(),
    };
    network_tensors(net, &mut w);
    encode(header_for(net, config_hash), w)
}

/// Serialize a trainer, including optimizer and scheduler state.
pub fn encode_trainer<T: Real>(trainer: &Trainer<T>, config_hash: Option<&str>) -> Vec<u8> {
    let mut w = Writer {
        entries: Vec::new(),
        data: Vec::new(),
    };
    network_tensors(&trainer.net, &mut w);
    for (p, (m, v)) in trainer
        .net
        .state
        .params
        .iter()
        .zip(trainer.adam.first.iter().zip(&trainer.adam.second))
    {
        w.push(format!("adam_m/{}", p.name), m);
        w.push(format!("adam_v/{}", p.name), v);
    }
    let mut header = header_for(&trainer.net, config_hash);
    header.train = Some(TrainState {
        config: trainer.config.clone(),
        seed: trainer.config.seed,
        objectives: trainer.objectives().to_vec(),
        lr: trainer.lr,
        adam_step: trainer.adam.step,
        scheduler_best: trainer.scheduler.best,
        scheduler_bad_epochs: trainer.scheduler.bad_epochs,
        scheduler_min_lr: trainer.scheduler.min_lr,
        record: trainer.record.to_csv(),
    });
    encode(header, w)
}

/// Parsed checkpoint with its data section already verified.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    data: Vec<f32>,
}

impl Checkpoint {
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let split = bytes
            .windows(SEPARATOR.len())
            .position(|w| w == SEPARATOR)
            .ok_or_else(|| Error::Data(format!("{}: no checkpoint header separator", origin.display())))?;
        let text = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Data(format!("{}: checkpoint header is not UTF-8", origin.display())))?;
        let header: CheckpointHeader =
            toml::from_str(text).map_err(|e| Error::Data(format!("{}: checkpoint header: {e}", origin.display())))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint format {}", header.format_version)));
        }
        let payload = &bytes[split + SEPARATOR.len()..];
        let actual = sha256_hex(payload);
        if actual != header.data_sha256 {
            return Err(Error::Checksum {
                path: origin.to_path_buf(),
                expected: header.data_sha256.clone(),
                actual,
            });
        }
        let data = bytes_f32(payload)?;
        for e in &header.tensors {
            if e.offset + e.shape.iter().product::<usize>() > data.len() {
                return Err(Error::Data(format!("tensor {} runs past the data section", e.name)));
            }
        }
        Ok(Checkpoint { header, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }

    fn tensor<T: Real>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let e = self
            .header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                found: e.shape.clone(),
            });
        }
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, self.data[e.offset..e.offset + n].iter().map(|&v| T::of(v as f64)).collect())
    }

    pub fn network<T: Real>(&self) -> Result<Network<T>> {
        let mut net = Network::new(self.header.network.clone(), 0)?;
        net.state.bn_momentum = self.header.bn_momentum;
        for p in &mut net.state.params {
            p.value = self.tensor(&format!("param/{}", p.name), p.value.shape())?;
        }
        for (name, s) in &mut net.state.running {
            s.mean = self.tensor(&format!("running_mean/{name}"), s.mean.shape())?;
            s.var = self.tensor(&format!("running_var/{name}"), s.var.shape())?;
        }
        Ok(net)
    }

    pub fn trainer<T: Real>(&self) -> Result<Trainer<T>> {
        let st = self
            .header
            .train
            .as_ref()
            .ok_or_else(|| Error::Data("checkpoint holds no training state".into()))?;
        let net = self.network()?;
        let config = TrainConfig {
            seed: st.seed,
            ..st.config.clone()
        };
        let mut trainer = Trainer::with_objectives(net, config, st.objectives.clone())?;
        let mut adam = AdamState::new(&trainer.net.state.params);
        for (i, p) in trainer.net.state.params.iter().enumerate() {
            adam.first[i] = self.tensor(&format!("adam_m/{}", p.name), p.value.shape())?;
            adam.second[i] = self.tensor(&format!("adam_v/{}", p.name), p.value.shape())?;
        }
        adam.step = st.adam_step;
        trainer.adam = adam;
        trainer.lr = st.lr;
        trainer.scheduler = PlateauScheduler {
            config: trainer.config.scheduler.clone(),
            min_lr: st.scheduler_min_lr,
            best: st.scheduler_best,
            bad_epochs: st.scheduler_bad_epochs,
        };
        trainer.record = TrainRecord::from_csv(&st.record)?;
        Ok(trainer)
    }
}

pub fn save_network<T: Real>(net: &Network<T>, path: &Path, config_hash: Option<&str>) -> Result<()> {
    write_file(path, &encode_network(net, config_hash))
}

pub fn save_trainer<T: Real>(trainer: &Trainer<T>, path: &Path, config_hash: Option<&str>) -> Result<()> {
    write_file(path, &encode_trainer(trainer, config_hash))
}

pub fn load_network<T: Real>(path: &Path) -> Result<Network<T>> {
    Checkpoint::read(path)?.network()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{TrainMode, TrainingData};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_data(n: usize) -> TrainingData<f32> {
        let cfg = NetworkConfig::tiny();
        let (h, w) = (cfg.height, cfg.width);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[n, 1, h, w], |_| rng.random_range(-1.0f32..1.0));
        let times = vec![0.5, 1.0];
        let y = Tensor::from_fn(&[2 * n, 2, h, w], |_| rng.random_range(0.0f32..1.0));
        let m = Tensor::from_fn(&[2 * n, 1, h, w], |_| if rng.random_bool(0.5) { 1.0f32 } else { 0.0 });
        TrainingData::new(x, times, y, m).unwrap()
    }

    fn trainer() -> Trainer<f32> {
        let config = TrainConfig {
            epochs: 4,
            batch_size: 3,
            seed: 9,
            ..TrainConfig::desk()
        };
        Trainer::new(Network::new(NetworkConfig::tiny(), 1).unwrap(), config, TrainMode::MseBce).unwrap()
    }

    #[test]
    fn network_round_trip_is_exact() {
        let net = Network::<f32>::new(NetworkConfig::tiny(), 4).unwrap();
        let back: Network<f32> = Checkpoint::decode(&encode_network(&net, Some("abc")), Path::new("m")).unwrap().network().unwrap();
        for (a, b) in net.state.params.iter().zip(&back.state.params) {
            assert_eq!(a.value, b.value);
        }
        let x = Tensor::full(&[1, 1, 8, 8], 0.3f32);
        assert_eq!(net.predict(&x, &[0.5]).unwrap(), back.predict(&x, &[0.5]).unwrap());
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let data = toy_data(5);
        let mut straight = trainer();
        straight.run(&data, None).unwrap();

        let mut first = trainer();
        first.run_epoch(&data, None).unwrap();
        first.run_epoch(&data, None).unwrap();
        let bytes = encode_trainer(&first, None);
        let mut resumed: Trainer<f32> = Checkpoint::decode(&bytes, Path::new("c")).unwrap().trainer().unwrap();
        assert_eq!(resumed.epochs_done(), 2);
        resumed.run(&data, None).unwrap();

        assert_eq!(resumed.record, straight.record);
        assert_eq!(resumed.optimizer_steps(), straight.optimizer_steps());
        for (a, b) in resumed.net.state.params.iter().zip(&straight.net.state.params) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let net = Network::<f32>::new(NetworkConfig::tiny(), 4).unwrap();
        let mut bytes = encode_network(&net, None);
        let n = bytes.len();
        bytes[n - 7] ^= 1;
        assert!(matches!(
            Checkpoint::decode(&bytes, Path::new("m")),
            Err(Error::Checksum { .. })
        ));
    }
}
