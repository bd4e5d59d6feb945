//! Log-Gaussian permeability fields on a regular grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reference permeability in m².
pub const DEFAULT_K_REF: f64 = 2.5e-13;

/// Cell-centered grid. `height` rows by `width` columns, flow runs along
/// columns (left to right).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Edge length of a square cell in meters.
    pub cell_size: f64,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, cell_size: f64) -> Result<Self> {
        let g = GridSpec {
            height,
            width,
            cell_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !(self.cell_size > 0.0) {
            return Err(Error::InvalidGeometry(format!("bad grid {self:?}")));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Center of cell `idx` (row-major) in meters, `(x, y)`.
    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (r, c) = (idx / self.width, idx % self.width);
        ((c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfParams {
    pub mean: f64,
    pub variance: f64,
    /// Correlation length in meters.
    pub correlation_length: f64,
    pub seed: u64,
}

impl Default for GrfParams {
    fn default() -> Self {
        GrfParams {
            mean: 0.0,
            variance: 0.5,
            correlation_length: 100.0,
            seed: 0,
        }
    }
}

impl GrfParams {
    /// Zero variance is accepted as the degenerate constant field.
    pub fn validate(&self) -> Result<()> {
        if !(self.variance >= 0.0) || !(self.correlation_length > 0.0) || !self.mean.is_finite() {
            return Err(Error::Config(format!("bad random field parameters {self:?}")));
        }
        Ok(())
    }
}

/// `σ² exp(−d/λ)` for two points in meters.
pub fn covariance(a: (f64, f64), b: (f64, f64), params: &GrfParams) -> f64 {
    let d = (a.0 - b.0).hypot(a.1 - b.1);
    params.variance * (-d / params.correlation_length).exp()
}

/// Dense covariance matrix over all cell centers, row-major.
pub fn covariance_matrix(grid: &GridSpec, params: &GrfParams) -> Vec<f64> {
    let n = grid.cells();
    let centers: Vec<_> = (0..n).map(|i| grid.center(i)).collect();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = covariance(centers[i], centers[j], params);
            c[i * n + j] = v;
            c[j * n + i] = v;
        }
    }
    c
}

/// In-place lower Cholesky factor of a row-major SPD matrix (upper part
/// is zeroed). On failure returns the offending pivot index and value.
fn cholesky_in_place(a: &mut [f64], n: usize) -> std::result::Result<(), (usize, f64)> {
    for j in 0..n {
        let row_j = &mut a[j * n..(j + 1) * n];
        let d = row_j[j] - row_j[..j].iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) {
            return Err((j, d));
        }
        let ljj = d.sqrt();
        row_j[j] = ljj;
        row_j[j + 1..].fill(0.0);
        let row_j = row_j[..j].to_vec();
        for i in j + 1..n {
            let row_i = &mut a[i * n..(i + 1) * n];
            let s: f64 = row_i[..j].iter().zip(&row_j).map(|(x, y)| x * y).sum();
            row_i[j] = (row_i[j] - s) / ljj;
        }
    }
    Ok(())
}

/// Grid sampler with the covariance factor computed once.
#[derive(Clone, Debug)]
pub struct GrfSampler {
    grid: GridSpec,
    params: GrfParams,
    /// Lower factor, row-major; empty for the zero-variance field.
    factor: Vec<f64>,
    /// Diagonal jitter that made the factorization succeed.
    pub jitter: f64,
}

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

impl GrfSampler {
    pub fn new(grid: GridSpec, params: GrfParams) -> Result<Self> {
        grid.validate()?;
        params.validate()?;
        let n = grid.cells();
        if params.variance == 0.0 {
            return Ok(GrfSampler {
                grid,
                params,
                factor: Vec::new(),
                jitter: 0.0,
            });
        }
        let cov = covariance_matrix(&grid, &params);
        let mut jitter = JITTER_START * params.variance;
        loop {
            let mut a = cov.clone();
            for i in 0..n {
                a[i * n + i] += jitter;
            }
            match cholesky_in_place(&mut a, n) {
                Ok(()) => {
                    return Ok(GrfSampler {
                        grid,
                        params,
                        factor: a,
                        jitter,
                    })
                }
                Err((pivot, value)) => {
                    if jitter * 2.0 > JITTER_MAX * params.variance * (1.0 + 1e-12) {
                        return Err(Error::Cholesky { jitter, pivot, value });
                    }
                    log::debug!("cholesky pivot {pivot} = {value:e} at jitter {jitter:e}, retrying");
                    jitter *= 2.0;
                }
            }
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn params(&self) -> &GrfParams {
        &self.params
    }

    /// `G = m + L ξ` for a given standard normal vector.
    pub fn transform(&self, xi: &[f64]) -> Vec<f64> {
        let n = self.grid.cells();
        assert_eq!(xi.len(), n, "noise length");
        if self.factor.is_empty() {
            return vec![self.params.mean; n];
        }
        (0..n)
            .map(|i| {
                let row = &self.factor[i * n..i * n + i + 1];
                self.params.mean + row.iter().zip(xi).map(|(l, x)| l * x).sum::<f64>()
            })
            .collect()
    }

    /// Log-permeability drawn from `rng`.
    pub fn sample_log<R: rand::Rng>(&self, rng: &mut R) -> Tensor<f64> {
        let xi: Vec<f64> = (0..self.grid.cells()).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::from_vec(&[self.grid.height, self.grid.width], self.transform(&xi)).expect("grid sized")
    }

    /// Field for realization `stream` under `seed`.
    pub fn sample(&self, seed: u64, stream: u64, k_ref: f64) -> PermeabilityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        PermeabilityField::from_log(self.sample_log(&mut rng), k_ref)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermeabilityField {
    /// `G(s)`
    pub log_values: Tensor<f64>,
    /// `k_ref · exp(G(s))` in m².
    pub values: Tensor<f64>,
    pub k_ref: f64,
}

impl PermeabilityField {
    pub fn from_log(log_values: Tensor<f64>, k_ref: f64) -> Self {
        let values = log_values.map(|g| k_ref * g.exp());
        PermeabilityField {
            log_values,
            values,
            k_ref,
        }
    }

    pub fn homogeneous(height: usize, width: usize, k_ref: f64) -> Self {
        Self::from_log(Tensor::zeros(&[height, width]), k_ref)
    }
}

/// One field from `params.seed`.
pub fn sample_field(grid: GridSpec, params: GrfParams, k_ref: f64) -> Result<PermeabilityField> {
    Ok(GrfSampler::new(grid, params)?.sample(params.seed, 0, k_ref))
}
