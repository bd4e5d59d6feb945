//! Losses, Adam, learning-rate scheduling and the two-stage training loop.
//!
//! In two-stage mode every minibatch triggers two optimizer steps: first on
//! the regularized MSE objective, then, starting from the updated
//! parameters, on MSE plus `bce_weight` times the segmentation loss. The
//! MSE-only baseline performs just the first step.

mod adam;
mod loss;
mod metrics;
mod schedule;

pub use adam::{AdamState, ADAM_EPSILON};
pub use loss::{bce_loss, binarize, binarize_at, mse_loss, Loss, BCE_CLAMP, BINARIZE_THRESHOLD};
pub use metrics::{iou, r2_rmse, Metrics, FRONT_SATURATION};
pub use schedule::{PlateauConfig, PlateauScheduler};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{concat_channels, split_channels, Mode};
use crate::network::Network;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub bce_weight: f64,
    pub betas: (f64, f64),
    pub scheduler: PlateauConfig,
    /// Shuffling seed; run configurations derive it from their global seed.
    #[serde(skip)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 100,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            bce_weight: 0.01,
            betas: (0.9, 0.999),
            scheduler: PlateauConfig::default(),
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.bce_weight >= 0.0;
        let betas_ok = (0.0..1.0).contains(&self.betas.0) && (0.0..1.0).contains(&self.betas.1);
        if !positive || !betas_ok {
            return Err(Error::Config(format!("invalid training settings: {self:?}")));
        }
        Ok(())
    }
}

/// Which objective a single optimizer step minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    Mse,
    MseBce { weight: f64 },
}

/// Training regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// One step on regularized MSE per minibatch.
    Mse,
    /// Regularized MSE step followed by an MSE + weighted BCE step.
    MseBce,
}

impl TrainMode {
    pub fn objectives(self, bce_weight: f64) -> Vec<Objective> {
        match self {
            TrainMode::Mse => vec![Objective::Mse],
            TrainMode::MseBce => vec![Objective::Mse, Objective::MseBce { weight: bce_weight }],
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(TrainMode::Mse),
            "mse-bce" => Ok(TrainMode::MseBce),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Records `(x^i, t_j; y^{i,j}, ζ^{i,j})` flattened with `m = i·n_t + j`.
#[derive(Clone, Debug)]
pub struct TrainingData<T: Real> {
    /// `[N, d_x, H, W]`
    pub inputs: Tensor<T>,
    /// Network time value of each time index.
    pub times: Vec<f64>,
    /// `[N·n_t, 2, H, W]` rescaled pressure and saturation.
    pub targets: Tensor<T>,
    /// `[N·n_t, 1, H, W]` binarized saturation.
    pub masks: Tensor<T>,
}

/// One minibatch assembled from [`TrainingData`].
#[derive(Clone, Debug)]
pub struct Batch<T: Real> {
    pub x: Tensor<T>,
    pub t: Vec<T>,
    pub y: Tensor<T>,
    pub mask: Tensor<T>,
}

impl<T: Real> TrainingData<T> {
    pub fn new(inputs: Tensor<T>, times: Vec<f64>, targets: Tensor<T>, masks: Tensor<T>) -> Result<Self> {
        let (n, _, h, w) = inputs.dims4()?;
        let records = n * times.len();
        targets.expect_shape(&[records, 2, h, w])?;
        masks.expect_shape(&[records, 1, h, w])?;
        Ok(TrainingData {
            inputs,
            times,
            targets,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, records: &[usize]) -> Result<Batch<T>> {
        let nt = self.times.len();
        let mut xs = Vec::with_capacity(records.len());
        let mut t = Vec::with_capacity(records.len());
        let mut ys = Vec::with_capacity(records.len());
        let mut zs = Vec::with_capacity(records.len());
        let s = self.inputs.shape();
        let (c, h, w) = (s[1], s[2], s[3]);
        for &m in records {
            if m >= self.len() {
                return Err(Error::Data(format!("record {m} out of range")));
            }
            xs.push(Tensor::from_vec(&[c, h, w], self.inputs.outer(m / nt).to_vec())?);
            t.push(T::of(self.times[m % nt]));
            ys.push(Tensor::from_vec(&[2, h, w], self.targets.outer(m).to_vec())?);
            zs.push(Tensor::from_vec(&[1, h, w], self.masks.outer(m).to_vec())?);
        }
        Ok(Batch {
            x: Tensor::stack(&xs.iter().collect::<Vec<_>>())?,
            t,
            y: Tensor::stack(&ys.iter().collect::<Vec<_>>())?,
            mask: Tensor::stack(&zs.iter().collect::<Vec<_>>())?,
        })
    }
}

impl<T: Real> Batch<T> {
    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            x: self.x.cast(),
            t: self.t.iter().map(|&v| U::of(v.as_f64())).collect(),
            y: self.y.cast(),
            mask: self.mask.cast(),
        }
    }
}

/// Loss components of one objective evaluation.
#[derive(Clone, Debug)]
pub struct ObjectiveValue {
    pub mse: f64,
    pub bce: f64,
    /// `(α/2)·θᵀθ`
    pub regularizer: f64,
    /// Full objective including the regularizer.
    pub total: f64,
    pub per_sample_sq_error: Vec<f64>,
}

/// Forward, loss and backward for one objective. Leaves the gradient of the
/// full objective, weight decay included, in `net.state`.
pub fn evaluate_objective<T: Real>(
    net: &mut Network<T>,
    batch: &Batch<T>,
    objective: Objective,
    weight_decay: f64,
    mode: Mode,
) -> Result<ObjectiveValue> {
    let out = net.forward(&batch.x, &batch.t, mode)?;
    let mut parts = split_channels(&out, &[2, 1])?;
    let zeta_hat = parts.pop().expect("two parts");
    let pred = parts.pop().expect("two parts");
    let mse = mse_loss(&pred, &batch.y)?;
    let bce = bce_loss(&zeta_hat, &batch.mask)?;
    let weight = match objective {
        Objective::Mse => 0.0,
        Objective::MseBce { weight } => weight,
    };
    let mut g_zeta = bce.grad;
    for v in g_zeta.data_mut() {
        *v *= T::of(weight);
    }
    if weight == 0.0 {
        g_zeta.fill(T::zero());
    }
    let (grad_out, _) = concat_channels(&[&mse.grad, &g_zeta])?;
    net.backward(&grad_out)?;
    let wd = T::of(weight_decay);
    for p in &mut net.state.params {
        for (g, &v) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
            *g += wd * v;
        }
    }
    let regularizer = 0.5 * weight_decay * net.state.squared_norm();
    Ok(ObjectiveValue {
        mse: mse.value,
        bce: bce.value,
        regularizer,
        total: mse.value + weight * bce.value + regularizer,
        per_sample_sq_error: mse.per_sample,
    })
}

/// Eval-mode predictions for every record, `[N·n_t, out_channels, H, W]`.
pub fn predict_records<T: Real>(net: &Network<T>, data: &TrainingData<T>, chunk: usize) -> Result<Tensor<T>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut outs = Vec::new();
    for part in idx.chunks(chunk.max(1)) {
        let b = data.batch(part)?;
        outs.push(net.predict(&b.x, &b.t)?);
    }
    let (_, c, h, w) = outs[0].dims4()?;
    let mut data_out = Vec::with_capacity(data.len() * c * h * w);
    for o in outs {
        data_out.extend(o.into_data());
    }
    Tensor::from_vec(&[data.len(), c, h, w], data_out)
}

/// Regression channels `(P′, Sg)` of a prediction tensor.
pub fn regression_channels<T: Real>(pred: &Tensor<T>) -> Result<Tensor<T>> {
    let mut parts = split_channels(pred, &[2, pred.dims4()?.1 - 2])?;
    parts.truncate(1);
    Ok(parts.pop().expect("one part"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse: f64,
    pub test_rmse: Option<f64>,
    pub mse_loss: f64,
    pub wbce_loss: f64,
    pub lr: f64,
}

/// Per-epoch training history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
}

pub const RECORD_HEADER: &str = "epoch,train_rmse,test_rmse,mse_loss,wbce_loss,lr";

impl TrainRecord {
    /// Comma-separated text, one row per epoch; a missing test RMSE is empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(RECORD_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let test = e.test_rmse.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:?},{},{:?},{:?},{:?}",
                e.epoch, e.train_rmse, test, e.mse_loss, e.wbce_loss, e.lr
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(RECORD_HEADER) {
            return Err(Error::Data("training record header mismatch".into()));
        }
        let bad = |l: &str| Error::Data(format!("malformed training record line `{l}`"));
        let mut epochs = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(line))?,
                train_rmse: num(f[1])?,
                test_rmse: if f[2].is_empty() { None } else { Some(num(f[2])?) },
                mse_loss: num(f[3])?,
                wbce_loss: num(f[4])?,
                lr: num(f[5])?,
            });
        }
        Ok(TrainRecord { epochs })
    }
}

/// Resumable training loop state.
#[derive(Clone)]
pub struct Trainer<T: Real> {
    pub net: Network<T>,
    pub adam: AdamState<T>,
    pub scheduler: PlateauScheduler,
    pub lr: f64,
    pub record: TrainRecord,
    pub config: TrainConfig,
    objectives: Vec<Objective>,
}

impl<T: Real> Trainer<T> {
    pub fn new(net: Network<T>, config: TrainConfig, mode: TrainMode) -> Result<Self> {
        let objectives = mode.objectives(config.bce_weight);
        Self::with_objectives(net, config, objectives)
    }

    /// Trainer running an arbitrary sequence of optimizer steps per
    /// minibatch.
    pub fn with_objectives(net: Network<T>, config: TrainConfig, objectives: Vec<Objective>) -> Result<Self> {
        config.validate()?;
        if objectives.is_empty() {
            return Err(Error::Config("at least one objective per minibatch".into()));
        }
        Ok(Trainer {
            adam: AdamState::new(&net.state.params),
            scheduler: PlateauScheduler::new(config.scheduler.clone(), config.learning_rate),
            lr: config.learning_rate,
            record: TrainRecord::default(),
            net,
            config,
            objectives,
        })
    }

    pub fn objectives(&self) -> &[Objective] {
        &self.objectives
    }

    pub fn epochs_done(&self) -> usize {
        self.record.epochs.len()
    }

    /// Minibatch order of an epoch; depends only on the seed and epoch index.
    pub fn epoch_order(&self, epoch: usize, records: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..records).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Train for one epoch; returns that epoch's record.
    pub fn run_epoch(&mut self, train: &TrainingData<T>, test: Option<&TrainingData<T>>) -> Result<EpochRecord> {
        let epoch = self.epochs_done();
        let order = self.epoch_order(epoch, train.len());
        let (mut sq_sum, mut mse_sum, mut bce_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, part) in order.chunks(self.config.batch_size).enumerate() {
            let batch = train.batch(part)?;
            let mut stage_bce = None;
            for (si, &objective) in self.objectives.iter().enumerate() {
                let v = evaluate_objective(&mut self.net, &batch, objective, self.config.weight_decay, Mode::Train)?;
                if !v.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        mse: v.mse,
                        bce: v.bce,
                    });
                }
                if si == 0 {
                    sq_sum += v.per_sample_sq_error.iter().sum::<f64>();
                    mse_sum += v.mse;
                }
                if matches!(objective, Objective::MseBce { .. }) || stage_bce.is_none() {
                    stage_bce = Some(v.bce);
                }
                self.adam.update(&mut self.net.state.params, self.lr, self.config.betas);
            }
            bce_sum += stage_bce.unwrap_or(0.0);
            batches += 1;
        }
        let train_rmse = (sq_sum / train.len() as f64).sqrt();
        let test_rmse = match test {
            Some(t) => {
                let pred = regression_channels(&predict_records(&self.net, t, 64)?)?;
                Some(r2_rmse(&pred, &t.targets).map(|m| m.rmse).or_else(|e| match e {
                    Error::UndefinedR2 => Ok(rmse_only(&pred, &t.targets)),
                    e => Err(e),
                })?)
            }
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            train_rmse,
            test_rmse,
            mse_loss: mse_sum / batches as f64,
            wbce_loss: self.config.bce_weight * bce_sum / batches as f64,
            lr: self.lr,
        };
        self.lr = self.scheduler.step(train_rmse, self.lr);
        self.record.epochs.push(rec.clone());
        Ok(rec)
    }

    /// Train until `config.epochs` epochs have been recorded.
    pub fn run(&mut self, train: &TrainingData<T>, test: Option<&TrainingData<T>>) -> Result<&TrainRecord> {
        while self.epochs_done() < self.config.epochs {
            let rec = self.run_epoch(train, test)?;
            log::info!(
                "epoch {:>3}  train rmse {:.5}  mse {:.5}  w*bce {:.3e}  lr {:.1e}",
                rec.epoch,
                rec.train_rmse,
                rec.mse_loss,
                rec.wbce_loss,
                rec.lr
            );
        }
        Ok(&self.record)
    }

    /// Optimizer steps taken so far.
    pub fn optimizer_steps(&self) -> u64 {
        self.adam.step
    }
}

fn rmse_only<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> f64 {
    let n = pred.shape()[0];
    let sse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    (sse / n as f64).sqrt()
}

/// Algorithm with both optimizer steps per minibatch.
pub fn train_two_stage<T: Real>(
    net: Network<T>,
    train: &TrainingData<T>,
    test: Option<&TrainingData<T>>,
    config: &TrainConfig,
) -> Result<(Network<T>, TrainRecord)> {
    let mut trainer = Trainer::new(net, config.clone(), TrainMode::MseBce)?;
    trainer.run(train, test)?;
    Ok((trainer.net, trainer.record))
}

/// Baseline with only the regularized MSE step.
pub fn mse_only_train<T: Real>(
    net: Network<T>,
    train: &TrainingData<T>,
    test: Option<&TrainingData<T>>,
    config: &TrainConfig,
) -> Result<(Network<T>, TrainRecord)> {
    let mut trainer = Trainer::new(net, config.clone(), TrainMode::Mse)?;
    trainer.run(train, test)?;
    Ok((trainer.net, trainer.record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use rand::{Rng, SeedableRng};

    fn toy_data(n: usize, seed: u64) -> TrainingData<f32> {
        let cfg = NetworkConfig::tiny();
        let (h, w) = (cfg.height, cfg.width);
        let times = vec![0.5, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Tensor::from_fn(&[n, 1, h, w], |_| rng.random_range(-1.0..1.0));
        let nt = times.len();
        let mut targets = Tensor::zeros(&[n * nt, 2, h, w]);
        for i in 0..n {
            let level = inputs.outer(i).iter().sum::<f32>() / (h * w) as f32;
            for (j, &t) in times.iter().enumerate() {
                let y = targets.outer_mut(i * nt + j);
                for c in 0..w {
                    for r in 0..h {
                        let front = (t as f32) * w as f32 * 0.5 * (1.0 + 0.3 * level);
                        y[r * w + c] = 0.3 * (1.0 - c as f32 / w as f32) * t as f32;
                        y[h * w + r * w + c] = if (c as f32) < front { 0.6 - 0.5 * c as f32 / front } else { 0.0 };
                    }
                }
            }
        }
        let sat = Tensor::from_fn(&[n * nt, 1, h, w], |k| {
            let (m, p) = (k / (h * w), k % (h * w));
            targets.outer(m)[h * w + p]
        });
        TrainingData::new(inputs, times, targets, binarize(&sat)).unwrap()
    }

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            learning_rate: 3e-3,
            ..TrainConfig::paper()
        }
    }

    #[test]
    fn batch_layout_follows_record_index() {
        let d = toy_data(3, 0);
        let b = d.batch(&[5, 0]).unwrap();
        assert_eq!(b.t, vec![1.0, 0.5]);
        assert_eq!(b.x.outer(0), d.inputs.outer(2));
        assert_eq!(b.y.outer(0), d.targets.outer(5));
        assert_eq!(b.mask.outer(1), d.masks.outer(0));
        assert!(d.batch(&[6]).is_err());
    }

    #[test]
    fn zero_weight_two_stage_equals_two_mse_steps() {
        let d = toy_data(4, 1);
        let net = Network::<f32>::new(NetworkConfig::tiny(), 3).unwrap();
        let cfg = TrainConfig {
            bce_weight: 0.0,
            ..small_config(2)
        };
        let mut a = Trainer::new(net.clone(), cfg.clone(), TrainMode::MseBce).unwrap();
        let mut b = Trainer::with_objectives(net, cfg, vec![Objective::Mse, Objective::Mse]).unwrap();
        a.run(&d, None).unwrap();
        b.run(&d, None).unwrap();
        for (p, q) in a.net.state.params.iter().zip(&b.net.state.params) {
            assert_eq!(p.value, q.value, "{}", p.name);
        }
    }

    #[test]
    fn step_counts_per_mode() {
        let d = toy_data(5, 2);
        let batches = d.len().div_ceil(4) as u64;
        for (mode, per) in [(TrainMode::Mse, 1), (TrainMode::MseBce, 2)] {
            let net = Network::<f32>::new(NetworkConfig::tiny(), 0).unwrap();
            let mut t = Trainer::new(net, small_config(3), mode).unwrap();
            t.run(&d, None).unwrap();
            assert_eq!(t.optimizer_steps(), 3 * batches * per);
            assert_eq!(t.record.epochs.len(), 3);
        }
    }

    #[test]
    fn training_reduces_rmse() {
        let d = toy_data(8, 4);
        let test = toy_data(4, 5);
        let net = Network::<f32>::new(NetworkConfig::tiny(), 1).unwrap();
        let mut t = Trainer::new(net, small_config(15), TrainMode::MseBce).unwrap();
        let rec = t.run(&d, Some(&test)).unwrap().clone();
        let first = rec.epochs.first().unwrap();
        let last = rec.epochs.last().unwrap();
        assert!(last.train_rmse < 0.7 * first.train_rmse, "{first:?} -> {last:?}");
        assert!(last.test_rmse.unwrap() < first.test_rmse.unwrap());
    }

    #[test]
    fn smoke_eight_samples_two_epochs() {
        let d = toy_data(8, 7);
        for mode in [TrainMode::Mse, TrainMode::MseBce] {
            let net = Network::<f32>::new(NetworkConfig::tiny(), 3).unwrap();
            let before = r2_rmse(&regression_channels(&predict_records(&net, &d, 16).unwrap()).unwrap(), &d.targets)
                .unwrap()
                .rmse;
            let mut t = Trainer::new(net, small_config(2), mode).unwrap();
            t.run(&d, None).unwrap();
            let after = r2_rmse(&regression_channels(&predict_records(&t.net, &d, 16).unwrap()).unwrap(), &d.targets)
                .unwrap()
                .rmse;
            assert!(after < before, "{mode:?}: {before} -> {after}");
        }
    }

    #[test]
    fn weight_decay_alone_shrinks_parameters() {
        // targets equal to a prediction leave only the decay gradient
        let net = Network::<f64>::new(NetworkConfig::tiny(), 2).unwrap();
        let d = toy_data(2, 6);
        let mut b = d.batch(&[0, 1]).unwrap().cast::<f64>();
        let out = net.predict(&b.x, &b.t).unwrap();
        let parts = split_channels(&out, &[2, 1]).unwrap();
        b.y = parts[0].clone();
        let mut m = net.clone();
        let v = evaluate_objective(&mut m, &b, Objective::Mse, 0.1, Mode::Eval).unwrap();
        assert!(v.mse < 1e-20);
        for p in &m.state.params {
            for (g, x) in p.grad.data().iter().zip(p.value.data()) {
                assert!((g - 0.1 * x).abs() <= 1e-12);
            }
        }
        assert!((v.regularizer - 0.05 * net.state.squared_norm()).abs() <= 1e-9);
    }

    #[test]
    fn epoch_order_is_seeded() {
        let net = Network::<f32>::new(NetworkConfig::tiny(), 0).unwrap();
        let t = Trainer::new(net, small_config(1), TrainMode::Mse).unwrap();
        assert_eq!(t.epoch_order(3, 20), t.epoch_order(3, 20));
        assert_ne!(t.epoch_order(3, 20), t.epoch_order(4, 20));
    }

    #[test]
    fn record_round_trips() {
        let rec = TrainRecord {
            epochs: vec![
                EpochRecord {
                    epoch: 0,
                    train_rmse: 0.25,
                    test_rmse: None,
                    mse_loss: 1.5,
                    wbce_loss: 0.003,
                    lr: 1e-3,
                },
                EpochRecord {
                    epoch: 1,
                    train_rmse: 0.125,
                    test_rmse: Some(0.2),
                    mse_loss: 0.7,
                    wbce_loss: 0.002,
                    lr: 1e-4,
                },
            ],
        };
        assert_eq!(TrainRecord::from_csv(&rec.to_csv()).unwrap(), rec);
        assert!(TrainRecord::from_csv("nope\n").is_err());
    }
}
