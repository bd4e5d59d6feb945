//! Monte Carlo moments and pointwise densities through any field evaluator.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flow::{simulate, SimConfig, SECONDS_PER_DAY};
use crate::grf::PermeabilityField;
use crate::network::Network;
use crate::tensor::{Real, Tensor};

/// Output fields compared by the UQ tools, in channel order.
pub const UQ_FIELDS: [&str; 2] = ["pressure", "saturation"];

/// Maps permeability realizations to `[n_t, 2, H, W]` output fields at the
/// given times (days).
pub trait Evaluator: Sync {
    fn evaluate(&self, inputs: &[PermeabilityField], days: &[f64]) -> Vec<Result<Tensor<f64>>>;
}

impl<F> Evaluator for F
where
    F: Fn(&PermeabilityField, &[f64]) -> Result<Tensor<f64>> + Sync,
{
    fn evaluate(&self, inputs: &[PermeabilityField], days: &[f64]) -> Vec<Result<Tensor<f64>>> {
        inputs.iter().map(|k| self(k, days)).collect()
    }
}

/// The flow simulator, one realization at a time.
#[derive(Clone, Debug)]
pub struct SimulatorEvaluator {
    pub config: SimConfig,
}

impl SimulatorEvaluator {
    fn one(&self, k: &PermeabilityField, days: &[f64]) -> Result<Tensor<f64>> {
        let mut config = self.config.clone();
        config.snapshot_times = days.iter().map(|d| d * SECONDS_PER_DAY).collect();
        config.total_time = config.total_time.max(*config.snapshot_times.last().unwrap_or(&0.0));
        let snaps = simulate(k, &config)?;
        let (h, w) = (config.grid.height, config.grid.width);
        let mut out = Vec::with_capacity(days.len() * 2 * h * w);
        for s in snaps {
            out.extend_from_slice(s.rescaled_pressure.data());
            out.extend_from_slice(s.saturation.data());
        }
        Tensor::from_vec(&[days.len(), 2, h, w], out)
    }
}

impl Evaluator for SimulatorEvaluator {
    fn evaluate(&self, inputs: &[PermeabilityField], days: &[f64]) -> Vec<Result<Tensor<f64>>> {
        inputs.iter().map(|k| self.one(k, days)).collect()
    }
}

/// The trained network, batched over realizations and times.
#[derive(Clone)]
pub struct SurrogateEvaluator<T: Real = f32> {
    pub net: Network<T>,
    /// Days that map to network time 1.
    pub time_scale_days: f64,
}

impl<T: Real> Evaluator for SurrogateEvaluator<T> {
    fn evaluate(&self, inputs: &[PermeabilityField], days: &[f64]) -> Vec<Result<Tensor<f64>>> {
        let run = || -> Result<Vec<Tensor<f64>>> {
            let cfg = self.net.config();
            let (h, w) = (cfg.height, cfg.width);
            let nt = days.len();
            let mut x = Vec::with_capacity(inputs.len() * nt * h * w);
            let mut t = Vec::with_capacity(inputs.len() * nt);
            for k in inputs {
                k.log_values.expect_shape(&[h, w])?;
                for &d in days {
                    x.extend(k.log_values.data().iter().map(|&g| T::of(g)));
                    t.push(T::of(d / self.time_scale_days));
                }
            }
            let x = Tensor::from_vec(&[inputs.len() * nt, 1, h, w], x)?;
            let pred = self.net.predict(&x, &t)?;
            let per = 2 * h * w;
            Ok((0..inputs.len())
                .map(|i| {
                    let mut v = Vec::with_capacity(nt * per);
                    for j in 0..nt {
                        v.extend(pred.outer(i * nt + j)[..per].iter().map(|p| p.as_f64()));
                    }
                    Tensor::from_vec(&[nt, 2, h, w], v).expect("sized")
                })
                .collect())
        };
        match run() {
            Ok(v) => v.into_iter().map(Ok).collect(),
            Err(e) => {
                let msg = e.to_string();
                inputs.iter().map(|_| Err(Error::Data(msg.clone()))).collect()
            }
        }
    }
}

/// Run `evaluator` over `inputs` on up to `threads` workers; results come
/// back in input order whatever the thread count.
pub fn evaluate_parallel<E: Evaluator + ?Sized>(
    evaluator: &E,
    inputs: &[PermeabilityField],
    days: &[f64],
    threads: usize,
) -> Vec<Result<Tensor<f64>>> {
    let threads = threads.max(1).min(inputs.len().max(1));
    if threads == 1 {
        return evaluator.evaluate(inputs, days);
    }
    let chunk = inputs.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| scope.spawn(move || evaluator.evaluate(part, days)))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluator thread panicked"))
            .collect()
    })
}

/// Single-pass mean and sum of squared deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct Welford {
    pub count: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Welford {
    pub fn new(len: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "sample size changed");
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Combine with an accumulator over disjoint samples.
    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased variance; needs at least two samples.
    pub fn variance(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples {
                need: 2,
                got: self.count,
            });
        }
        let d = (self.count - 1) as f64;
        Ok(self.m2.iter().map(|s| (s / d).max(0.0)).collect())
    }
}

/// Per-pixel mean and variance of every output field at every time.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentFields {
    /// Days.
    pub times: Vec<f64>,
    /// `[n_t, 2, H, W]`
    pub mean: Tensor<f64>,
    /// `[n_t, 2, H, W]`, unbiased.
    pub variance: Tensor<f64>,
    pub count: usize,
    /// Realization indices that contributed, ascending.
    pub realizations: Vec<usize>,
    /// Realizations whose evaluation failed.
    pub failures: Vec<usize>,
}

impl MomentFields {
    pub fn standard_error(&self) -> Tensor<f64> {
        let n = self.count as f64;
        self.variance.map(|v| (v / n).sqrt())
    }

    /// `[H, W]` slice of `mean` or `variance`.
    pub fn slice(t: &Tensor<f64>, time: usize, field: usize) -> &[f64] {
        let s = t.shape();
        let plane = s[2] * s[3];
        &t.data()[(time * s[1] + field) * plane..(time * s[1] + field + 1) * plane]
    }
}

/// Realizations evaluated together before their outputs are accumulated.
pub const MC_CHUNK: usize = 64;

/// Streaming Monte Carlo moments over `inputs` (realization `i` is
/// `inputs[i]`). Failed realizations are skipped and listed.
pub fn mc_moments<E: Evaluator + ?Sized>(
    evaluator: &E,
    inputs: &[PermeabilityField],
    days: &[f64],
    threads: usize,
) -> Result<MomentFields> {
    Ok(mc_moments_probed(evaluator, inputs, days, &[], threads)?.0)
}

/// [`mc_moments`] that also keeps every included realization's value at
/// each probe, in realization order.
pub fn mc_moments_probed<E: Evaluator + ?Sized>(
    evaluator: &E,
    inputs: &[PermeabilityField],
    days: &[f64],
    probes: &[Probe],
    threads: usize,
) -> Result<(MomentFields, Vec<Vec<f64>>)> {
    let mut acc: Option<(Welford, Vec<usize>)> = None;
    let mut included = Vec::new();
    let mut failures = Vec::new();
    let mut samples = vec![Vec::with_capacity(inputs.len()); probes.len()];
    for (c, part) in inputs.chunks(MC_CHUNK).enumerate() {
        for (j, r) in evaluate_parallel(evaluator, part, days, threads).into_iter().enumerate() {
            let idx = c * MC_CHUNK + j;
            match r {
                Ok(y) => {
                    let (w, _) = acc.get_or_insert_with(|| (Welford::new(y.len()), y.shape().to_vec()));
                    w.push(y.data());
                    for (p, o) in probes.iter().zip(&mut samples) {
                        o.push(y.at(&[p.time, p.field, p.row, p.col]));
                    }
                    included.push(idx);
                }
                Err(e) => {
                    log::warn!("realization {idx} excluded: {e}");
                    failures.push(idx);
                }
            }
        }
    }
    let Some((w, shape)) = acc else {
        return Err(Error::InsufficientSamples { need: 2, got: 0 });
    };
    if !failures.is_empty() {
        log::warn!("{} of {} realizations failed", failures.len(), inputs.len());
    }
    let variance = w.variance()?;
    let moments = MomentFields {
        times: days.to_vec(),
        mean: Tensor::from_vec(&shape, w.mean)?,
        variance: Tensor::from_vec(&shape, variance)?,
        count: w.count,
        realizations: included,
        failures,
    };
    Ok((moments, samples))
}

/// Sample at one pixel of one field at one time index for every realization.
pub fn pixel_samples<E: Evaluator + ?Sized>(
    evaluator: &E,
    inputs: &[PermeabilityField],
    days: &[f64],
    probes: &[Probe],
    threads: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(inputs.len()); probes.len()];
    for part in inputs.chunks(MC_CHUNK) {
        for r in evaluate_parallel(evaluator, part, days, threads) {
            let Ok(y) = r else { continue };
            for (p, o) in probes.iter().zip(&mut out) {
                o.push(y.at(&[p.time, p.field, p.row, p.col]));
            }
        }
    }
    Ok(out)
}

/// A pixel of one output field at one time index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub field: usize,
    pub time: usize,
    pub row: usize,
    pub col: usize,
}

pub const MIN_PDF_SAMPLES: usize = 30;
pub const MIN_BINS: usize = 20;
pub const MAX_BINS: usize = 200;
/// Share of samples a separated histogram mode must hold to count.
pub const MODE_MASS: f64 = 0.05;

/// Normalized histogram of one pixel's samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PdfEstimate {
    pub probe: Probe,
    /// Day of the probed time.
    pub day: f64,
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub count: usize,
    /// Set when every sample is identical; `edges` and `density` are empty.
    pub spike: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Freedman–Diaconis bin count, at least [`MIN_BINS`] and at most [`MAX_BINS`].
pub fn freedman_diaconis_bins(samples: &[f64]) -> usize {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[s.len() - 1] - s[0];
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    if iqr <= 0.0 || range <= 0.0 {
        return MIN_BINS;
    }
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    ((range / width).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
}

/// Histogram density over fixed edges; samples outside are ignored.
pub fn histogram(samples: &[f64], edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in samples {
        if v < lo || v > hi {
            continue;
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let norm = samples.len() as f64 * width;
    counts.into_iter().map(|c| c as f64 / norm).collect()
}

fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect()
}

impl PdfEstimate {
    pub fn from_samples(samples: &[f64], probe: Probe, day: f64, bins: Option<usize>) -> Result<Self> {
        if samples.len() < MIN_PDF_SAMPLES {
            return Err(Error::InsufficientSamples {
                need: MIN_PDF_SAMPLES,
                got: samples.len(),
            });
        }
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Ok(PdfEstimate {
                probe,
                day,
                edges: Vec::new(),
                density: Vec::new(),
                count: samples.len(),
                spike: Some(lo),
            });
        }
        let bins = bins.unwrap_or_else(|| freedman_diaconis_bins(samples)).max(1);
        let edges = uniform_edges(lo, hi, bins);
        let density = histogram(samples, &edges);
        Ok(PdfEstimate {
            probe,
            day,
            edges,
            density,
            count: samples.len(),
            spike: None,
        })
    }

    pub fn integral(&self) -> f64 {
        if self.spike.is_some() {
            return 1.0;
        }
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }

    /// Probability mass of each run of non-empty bins bounded by empty bins.
    pub fn separated_modes(&self) -> Vec<f64> {
        let mut runs = Vec::new();
        let mut current: Option<f64> = None;
        for (d, e) in self.density.iter().zip(self.edges.windows(2)) {
            if *d > 0.0 {
                *current.get_or_insert(0.0) += d * (e[1] - e[0]);
            } else if let Some(m) = current.take() {
                runs.push(m);
            }
        }
        runs.extend(current);
        runs
    }

    /// At least two separated modes each holding [`MODE_MASS`] of the samples.
    pub fn is_bimodal(&self) -> bool {
        self.separated_modes().iter().filter(|&&m| m >= MODE_MASS).count() >= 2
    }

    pub fn mean(&self) -> f64 {
        if let Some(v) = self.spike {
            return v;
        }
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]) * 0.5 * (e[0] + e[1]))
            .sum()
    }

    /// `left,right,density` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("left,right,density\n");
        if let Some(v) = self.spike {
            let _ = writeln!(s, "{v:?},{v:?},inf");
        }
        for (d, e) in self.density.iter().zip(self.edges.windows(2)) {
            let _ = writeln!(s, "{:?},{:?},{:?}", e[0], e[1], d);
        }
        s
    }
}

/// Histogram estimate at `probe` from `evaluator` over `inputs`.
pub fn mc_pdf<E: Evaluator + ?Sized>(
    evaluator: &E,
    inputs: &[PermeabilityField],
    days: &[f64],
    probe: Probe,
    bins: Option<usize>,
) -> Result<PdfEstimate> {
    let samples = pixel_samples(evaluator, inputs, days, &[probe], 1)?.remove(0);
    PdfEstimate::from_samples(&samples, probe, days[probe.time], bins)
}

/// L1 distance between the densities of two sample sets on shared edges.
pub fn pdf_l1(a: &[f64], b: &[f64]) -> f64 {
    let all: Vec<f64> = a.iter().chain(b).cloned().collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return 0.0;
    }
    let edges = uniform_edges(lo, hi, freedman_diaconis_bins(&all));
    let width = edges[1] - edges[0];
    histogram(a, &edges)
        .iter()
        .zip(histogram(b, &edges))
        .map(|(x, y)| (x - y).abs() * width)
        .sum()
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldComparison {
    pub day: f64,
    pub field: &'static str,
    pub mean_rel_l2: f64,
    pub variance_rel_l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdfComparison {
    pub probe: Probe,
    pub day: f64,
    pub l1: f64,
    pub surrogate_bimodal: bool,
    pub oracle_bimodal: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UqReport {
    pub fields: Vec<FieldComparison>,
    pub pdfs: Vec<PdfComparison>,
}

impl UqReport {
    pub fn worst_mean_error(&self, field: &str) -> f64 {
        self.fields
            .iter()
            .filter(|c| c.field == field)
            .map(|c| c.mean_rel_l2)
            .fold(0.0, f64::max)
    }

    pub fn fields_csv(&self) -> String {
        let mut s = String::from("day,field,mean_rel_l2,variance_rel_l2\n");
        for c in &self.fields {
            let _ = writeln!(s, "{:?},{},{:?},{:?}", c.day, c.field, c.mean_rel_l2, c.variance_rel_l2);
        }
        s
    }

    pub fn pdfs_csv(&self) -> String {
        let mut s = String::from("day,field,row,col,l1,surrogate_bimodal,oracle_bimodal\n");
        for p in &self.pdfs {
            let _ = writeln!(
                s,
                "{:?},{},{},{},{:?},{},{}",
                p.day, UQ_FIELDS[p.probe.field], p.probe.row, p.probe.col, p.l1, p.surrogate_bimodal, p.oracle_bimodal
            );
        }
        s
    }
}

/// Relative L2 errors of mean and variance maps per field and time, plus
/// PDF distances at probes given paired per-probe samples.
pub fn compare_uq(
    surrogate: &MomentFields,
    oracle: &MomentFields,
    probe_samples: &[(Probe, Vec<f64>, Vec<f64>)],
) -> Result<UqReport> {
    if surrogate.realizations != oracle.realizations || surrogate.times != oracle.times {
        return Err(Error::MismatchedRealizations);
    }
    oracle.mean.expect_shape(surrogate.mean.shape())?;
    let mut report = UqReport::default();
    for (ti, &day) in oracle.times.iter().enumerate() {
        for (fi, &name) in UQ_FIELDS.iter().enumerate() {
            report.fields.push(FieldComparison {
                day,
                field: name,
                mean_rel_l2: relative_l2(
                    MomentFields::slice(&surrogate.mean, ti, fi),
                    MomentFields::slice(&oracle.mean, ti, fi),
                ),
                variance_rel_l2: relative_l2(
                    MomentFields::slice(&surrogate.variance, ti, fi),
                    MomentFields::slice(&oracle.variance, ti, fi),
                ),
            });
        }
    }
    for (probe, s, o) in probe_samples {
        if s.len() != o.len() {
            return Err(Error::MismatchedRealizations);
        }
        let day = oracle.times[probe.time];
        let bimodal = |v: &[f64]| -> Result<bool> { Ok(PdfEstimate::from_samples(v, *probe, day, None)?.is_bimodal()) };
        report.pdfs.push(PdfComparison {
            probe: *probe,
            day,
            l1: pdf_l1(s, o),
            surrogate_bimodal: bimodal(s)?,
            oracle_bimodal: bimodal(o)?,
        });
    }
    Ok(report)
}
