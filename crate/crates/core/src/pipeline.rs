//! The four commands behind the CLI: generate, train, eval and uq.
//!
//! Every command reads and writes under one run directory:
//!
//! ```text
//! <out>/config.toml            configuration of the last command
//! <out>/data/{train,test}/     shards + manifest.toml
//! <out>/model-<mode>/          epoch-NNNN.ckpt, final.ckpt, record.csv
//! <out>/eval-<split>/          metrics.csv, optional predictions
//! <out>/uq/                    moment maps, PDFs, reports, checksums.txt
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{save_network, save_trainer, Checkpoint};
use crate::config::{same_day, RunConfig, UQ_STREAM};
use crate::dataset::{f32_bytes, generate_split, sha256_hex, write_file, Dataset, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::flow::SimConfig;
use crate::grf::{GrfSampler, PermeabilityField};
use crate::network::Network;
use crate::tensor::Tensor;
use crate::train::{
    binarize_at, iou, predict_records, r2_rmse, regression_channels, Metrics, TrainMode, TrainRecord, Trainer,
    TrainingData, FRONT_SATURATION,
};
use crate::uq::{
    compare_uq, mc_moments_probed, MomentFields, PdfEstimate, Probe, SimulatorEvaluator, SurrogateEvaluator,
    UqReport, UQ_FIELDS,
};

pub fn data_dir(out: &Path, split: Split) -> PathBuf {
    out.join("data").join(split.name())
}

pub fn model_dir(out: &Path, mode: TrainMode) -> PathBuf {
    out.join(match mode {
        TrainMode::Mse => "model-mse",
        TrainMode::MseBce => "model-mse-bce",
    })
}

pub fn archive_config(config: &RunConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join("config.toml"), config.to_toml().as_bytes())
}

/// Simulate and store the train and test splits.
pub fn generate(config: &RunConfig, out: &Path) -> Result<[DatasetManifest; 2]> {
    config.validate()?;
    archive_config(config, out)?;
    Ok([
        generate_split(config, Split::Train, &data_dir(out, Split::Train))?,
        generate_split(config, Split::Test, &data_dir(out, Split::Test))?,
    ])
}

fn check_geometry(net: &Network<f32>, height: usize, width: usize) -> Result<()> {
    let c = net.config();
    if (c.height, c.width) != (height, width) {
        return Err(Error::Data(format!(
            "model expects {}x{} inputs, data is {height}x{width}",
            c.height, c.width
        )));
    }
    Ok(())
}

pub struct TrainOutcome {
    pub trainer: Trainer<f32>,
    pub checkpoint: PathBuf,
}

/// Train on `<out>/data/train`, writing checkpoints and the record into
/// `<out>/model-<mode>`. With `resume`, training continues from that
/// checkpoint's full optimizer state.
pub fn train(config: &RunConfig, out: &Path, mode: TrainMode, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let data = Dataset::load(&data_dir(out, Split::Train))?;
    if data.manifest.split != Split::Train {
        return Err(Error::Data("training requires a dataset with split = train".into()));
    }
    let train = data.training_data(&config.data.train_days)?;
    let dir = model_dir(out, mode);
    let hash = config.hash();
    let mut trainer = match resume {
        Some(path) => {
            let mut t: Trainer<f32> = Checkpoint::read(path)?.trainer()?;
            t.config.epochs = config.training.epochs;
            t
        }
        None => Trainer::new(Network::new(config.network.clone(), config.seed)?, config.train_config(), mode)?,
    };
    check_geometry(&trainer.net, data.manifest.height, data.manifest.width)?;
    archive_config(config, &dir)?;
    while trainer.epochs_done() < trainer.config.epochs {
        let rec = trainer.run_epoch(&train, None)?;
        log::info!(
            "epoch {:>3}  train rmse {:.5}  mse {:.5}  w*bce {:.3e}  lr {:.1e}",
            rec.epoch,
            rec.train_rmse,
            rec.mse_loss,
            rec.wbce_loss,
            rec.lr
        );
        let every = config.io.checkpoint_every;
        if every > 0 && trainer.epochs_done() % every == 0 {
            save_trainer(&trainer, &dir.join(format!("epoch-{:04}.ckpt", trainer.epochs_done())), Some(&hash))?;
        }
    }
    let checkpoint = dir.join("final.ckpt");
    save_trainer(&trainer, &checkpoint, Some(&hash))?;
    write_file(&dir.join("record.csv"), trainer.record.to_csv().as_bytes())?;
    Ok(TrainOutcome { trainer, checkpoint })
}

pub fn read_record(dir: &Path) -> Result<TrainRecord> {
    let path = dir.join("record.csv");
    TrainRecord::from_csv(&std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeMetrics {
    pub day: f64,
    pub trained: bool,
    pub r2: f64,
    pub rmse: f64,
    /// Mean per-sample IoU of predicted Sg > [`FRONT_SATURATION`] against the
    /// true front mask.
    pub iou: f64,
    /// Same against the segmentation channel thresholded at 0.5.
    pub iou_segmentation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub overall: Metrics,
    pub iou: f64,
    pub iou_segmentation: f64,
    pub per_time: Vec<TimeMetrics>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("day,trained,r2,rmse,iou,iou_segmentation\n");
        let _ = writeln!(
            s,
            "all,,{:?},{:?},{:?},{:?}",
            self.overall.r2, self.overall.rmse, self.iou, self.iou_segmentation
        );
        for t in &self.per_time {
            let _ = writeln!(
                s,
                "{:?},{},{:?},{:?},{:?},{:?}",
                t.day, t.trained, t.r2, t.rmse, t.iou, t.iou_segmentation
            );
        }
        s
    }

    pub fn time(&self, day: f64) -> Option<&TimeMetrics> {
        self.per_time.iter().find(|t| same_day(t.day, day))
    }

    /// Mean R² over times seen in training.
    pub fn trained_r2(&self) -> f64 {
        let r: Vec<f64> = self.per_time.iter().filter(|t| t.trained).map(|t| t.r2).collect();
        r.iter().sum::<f64>() / r.len() as f64
    }
}

fn mean_iou(pred: &Tensor<f32>, truth: &Tensor<f32>) -> f64 {
    let n = pred.shape()[0];
    (0..n).map(|i| iou(pred.outer(i), truth.outer(i))).sum::<f64>() / n as f64
}

/// Channel `c` of every record, `[N, 1, H, W]`.
fn channel(t: &Tensor<f32>, c: usize) -> Tensor<f32> {
    let s = t.shape();
    let plane = s[2] * s[3];
    let data = (0..s[0]).flat_map(|i| t.outer(i)[c * plane..(c + 1) * plane].iter().copied()).collect();
    Tensor::from_vec(&[s[0], 1, s[2], s[3]], data).expect("channel shape")
}

fn score(pred: &Tensor<f32>, data: &TrainingData<f32>) -> Result<(Metrics, f64, f64)> {
    let metrics = r2_rmse(&regression_channels(pred)?, &data.targets)?;
    let sg = binarize_at(&channel(pred, 1), FRONT_SATURATION);
    let seg = binarize_at(&channel(pred, 2), 0.5);
    Ok((metrics, mean_iou(&sg, &data.masks), mean_iou(&seg, &data.masks)))
}

/// R², RMSE and front IoU of `net` on every stored time of `data`, with
/// `train_days` marking the times seen in training. Returns the raw
/// predictions alongside the report.
pub fn evaluate(net: &Network<f32>, data: &Dataset, train_days: &[f64]) -> Result<(EvalReport, Tensor<f32>)> {
    check_geometry(net, data.manifest.height, data.manifest.width)?;
    if data.manifest.split == Split::Train {
        log::warn!("evaluating on the training split; scores are not a generalization estimate");
    }
    let days = data.manifest.times_days.clone();
    let all = data.training_data(&days)?;
    let pred = predict_records(net, &all, 64)?;
    let (overall, iou_all, seg_all) = score(&pred, &all)?;
    let nt = days.len();
    let mut per_time = Vec::with_capacity(nt);
    for (j, &day) in days.iter().enumerate() {
        let one = data.training_data(&[day])?;
        let idx: Vec<usize> = (0..data.manifest.samples).map(|i| i * nt + j).collect();
        let p = pred.select_outer(&idx)?;
        let (m, iou_t, seg_t) = score(&p, &one)?;
        per_time.push(TimeMetrics {
            day,
            trained: train_days.iter().any(|d| same_day(*d, day)),
            r2: m.r2,
            rmse: m.rmse,
            iou: iou_t,
            iou_segmentation: seg_t,
        });
    }
    Ok((
        EvalReport {
            split: data.manifest.split,
            overall,
            iou: iou_all,
            iou_segmentation: seg_all,
            per_time,
        },
        pred,
    ))
}

/// Evaluate a checkpoint on `<out>/data/<split>` and write `metrics.csv`
/// (and `predictions.f32` when `dump` is set) into `<out>/eval-<split>`.
pub fn eval_command(config: &RunConfig, out: &Path, checkpoint: &Path, split: Split, dump: bool) -> Result<EvalReport> {
    let net: Network<f32> = Checkpoint::read(checkpoint)?.network()?;
    let data = Dataset::load(&data_dir(out, split))?;
    let (report, pred) = evaluate(&net, &data, &config.data.train_days)?;
    let dir = out.join(format!("eval-{}", split.name()));
    write_file(&dir.join("metrics.csv"), report.to_csv().as_bytes())?;
    if dump {
        write_file(&dir.join("predictions.f32"), &f32_bytes(pred.data().iter().copied()))?;
    }
    Ok(report)
}

/// Realizations `0..n` of the UQ stream.
pub fn uq_realizations(config: &RunConfig, n: usize) -> Result<Vec<PermeabilityField>> {
    let sampler = GrfSampler::new(config.simulator.grid, config.field.params(config.seed))?;
    Ok((0..n as u64)
        .map(|i| sampler.sample(config.seed, UQ_STREAM + i, config.field.k_ref))
        .collect())
}

/// Every (field, time) combination at the configured probe pixels.
pub fn uq_probes(config: &RunConfig) -> Vec<Probe> {
    let nt = config.snapshot_days().len();
    let mut probes = Vec::new();
    for &(row, col) in &config.uq.probes {
        for time in 0..nt {
            for field in 0..UQ_FIELDS.len() {
                probes.push(Probe { field, time, row, col });
            }
        }
    }
    probes
}

pub struct UqOutcome {
    pub surrogate: MomentFields,
    pub oracle: MomentFields,
    pub probes: Vec<Probe>,
    pub surrogate_samples: Vec<Vec<f64>>,
    pub oracle_samples: Vec<Vec<f64>>,
    pub report: UqReport,
}

/// Monte Carlo through the simulator and the surrogate on the same
/// realizations. Realizations the simulator fails on are dropped from both.
pub fn run_uq(
    net: &Network<f32>,
    simulator: &SimConfig,
    inputs: &[PermeabilityField],
    days: &[f64],
    probes: &[Probe],
    time_scale_days: f64,
    threads: usize,
) -> Result<UqOutcome> {
    let oracle_eval = SimulatorEvaluator {
        config: simulator.clone(),
    };
    let (oracle, oracle_samples) = mc_moments_probed(&oracle_eval, inputs, days, probes, threads)?;
    let kept: Vec<PermeabilityField> = oracle.realizations.iter().map(|&i| inputs[i].clone()).collect();
    let surrogate_eval = SurrogateEvaluator {
        net: net.clone(),
        time_scale_days,
    };
    let (mut surrogate, surrogate_samples) = mc_moments_probed(&surrogate_eval, &kept, days, probes, threads)?;
    if !surrogate.failures.is_empty() {
        return Err(Error::MismatchedRealizations);
    }
    surrogate.realizations = oracle.realizations.clone();
    let paired: Vec<(Probe, Vec<f64>, Vec<f64>)> = probes
        .iter()
        .zip(surrogate_samples.iter().zip(&oracle_samples))
        .map(|(p, (s, o))| (*p, s.clone(), o.clone()))
        .collect();
    let report = compare_uq(&surrogate, &oracle, &paired)?;
    Ok(UqOutcome {
        surrogate,
        oracle,
        probes: probes.to_vec(),
        surrogate_samples,
        oracle_samples,
        report,
    })
}

/// Write the UQ bundle into `dir` and return its `checksums.txt` text.
pub fn write_uq_bundle(outcome: &UqOutcome, config: &RunConfig, dir: &Path) -> Result<String> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut manifest = String::new();
    let s = outcome.oracle.mean.shape();
    let _ = writeln!(manifest, "format_version = 1");
    let _ = writeln!(manifest, "layout = \"time, field, row, col\"");
    let _ = writeln!(manifest, "shape = {s:?}");
    let _ = writeln!(manifest, "fields = {:?}", UQ_FIELDS);
    let _ = writeln!(manifest, "times_days = {:?}", outcome.oracle.times);
    let _ = writeln!(manifest, "realizations = {}", outcome.oracle.count);
    let _ = writeln!(manifest, "failed_realizations = {:?}", outcome.oracle.failures);
    for (source, m) in [("surrogate", &outcome.surrogate), ("oracle", &outcome.oracle)] {
        for (stat, t) in [("mean", &m.mean), ("variance", &m.variance)] {
            files.push((format!("{source}-{stat}.f64"), t.data().iter().flat_map(|v| v.to_le_bytes()).collect()));
        }
    }
    for (i, p) in outcome.probes.iter().enumerate() {
        let day = outcome.oracle.times[p.time];
        for (source, samples) in [("surrogate", &outcome.surrogate_samples[i]), ("oracle", &outcome.oracle_samples[i])] {
            let pdf = PdfEstimate::from_samples(samples, *p, day, None)?;
            files.push((
                format!("pdf/{source}-{}-r{}-c{}-d{day}.csv", UQ_FIELDS[p.field], p.row, p.col),
                pdf.to_csv().into_bytes(),
            ));
        }
    }
    files.push(("fields.csv".into(), outcome.report.fields_csv().into_bytes()));
    files.push(("pdfs.csv".into(), outcome.report.pdfs_csv().into_bytes()));
    files.push(("moments.toml".into(), manifest.into_bytes()));
    files.push(("config.toml".into(), config.to_toml().into_bytes()));
    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut sums = String::new();
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
        let _ = writeln!(sums, "{}  {name}", sha256_hex(bytes));
    }
    write_file(&dir.join("checksums.txt"), sums.as_bytes())?;
    Ok(sums)
}

/// Fresh seeded realizations through surrogate and simulator; bundle in
/// `<out>/uq`.
pub fn uq_command(config: &RunConfig, out: &Path, checkpoint: &Path) -> Result<UqReport> {
    config.validate()?;
    let net: Network<f32> = Checkpoint::read(checkpoint)?.network()?;
    check_geometry(&net, config.simulator.grid.height, config.simulator.grid.width)?;
    let inputs = uq_realizations(config, config.uq.realizations)?;
    let outcome = run_uq(
        &net,
        &config.simulator,
        &inputs,
        &config.snapshot_days(),
        &uq_probes(config),
        config.data.time_scale_days,
        config.threads,
    )?;
    write_uq_bundle(&outcome, config, &out.join("uq"))?;
    Ok(outcome.report)
}

/// Save a bare network checkpoint, for models trained outside [`train`].
pub fn export_network(net: &Network<f32>, path: &Path, config: &RunConfig) -> Result<()> {
    save_network(net, path, Some(&config.hash()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::GridSpec;
    use crate::network::NetworkConfig;

    fn config() -> RunConfig {
        let mut c = RunConfig::desk();
        c.simulator.grid = GridSpec::new(8, 8, 10.0).unwrap();
        c.network = NetworkConfig::tiny();
        c.data.train_samples = 6;
        c.data.test_samples = 4;
        c.data.shard_samples = 4;
        c.training.epochs = 2;
        c.training.batch_size = 8;
        c.uq.realizations = 40;
        c.uq.probes = vec![(4, 2)];
        c.io.checkpoint_every = 1;
        c.threads = 2;
        c
    }

    #[test]
    fn commands_compose() {
        let dir = tempfile::tempdir().unwrap();
        let c = config();
        generate(&c, dir.path()).unwrap();
        let outcome = train(&c, dir.path(), TrainMode::MseBce, None).unwrap();
        assert_eq!(outcome.trainer.record.epochs.len(), 2);
        assert!(model_dir(dir.path(), TrainMode::MseBce).join("epoch-0001.ckpt").exists());
        assert_eq!(read_record(&model_dir(dir.path(), TrainMode::MseBce)).unwrap(), outcome.trainer.record);

        let report = eval_command(&c, dir.path(), &outcome.checkpoint, Split::Test, true).unwrap();
        assert_eq!(report.per_time.len(), 7);
        assert!(!report.time(150.0).unwrap().trained);
        assert!(report.per_time.iter().all(|t| (0.0..=1.0).contains(&t.iou)));

        let uq = uq_command(&c, dir.path(), &outcome.checkpoint).unwrap();
        assert_eq!(uq.fields.len(), 14);
        assert_eq!(uq.pdfs.len(), 14);
        let sums = std::fs::read_to_string(dir.path().join("uq/checksums.txt")).unwrap();
        let again = tempfile::tempdir().unwrap();
        uq_command(&c, again.path(), &outcome.checkpoint).unwrap();
        assert_eq!(std::fs::read_to_string(again.path().join("uq/checksums.txt")).unwrap(), sums);
    }

    #[test]
    fn resume_continues_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config();
        generate(&c, dir.path()).unwrap();
        let full = train(&c, dir.path(), TrainMode::Mse, None).unwrap();
        let ckpt = model_dir(dir.path(), TrainMode::Mse).join("epoch-0001.ckpt");
        let part = dir.path().join("one.ckpt");
        std::fs::copy(&ckpt, &part).unwrap();
        c.training.epochs = 2;
        let resumed = train(&c, dir.path(), TrainMode::Mse, Some(&part)).unwrap();
        assert_eq!(resumed.trainer.record, full.trainer.record);
    }

    #[test]
    fn geometry_mismatch_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = config();
        generate(&c, dir.path()).unwrap();
        let mut wrong = NetworkConfig::tiny();
        wrong.height = 16;
        wrong.width = 16;
        let net = Network::<f32>::new(wrong, 0).unwrap();
        let data = Dataset::load(&data_dir(dir.path(), Split::Test)).unwrap();
        let err = evaluate(&net, &data, &c.data.train_days).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
