//! Incompressible two-phase flow on a 2-D grid with IMPES time stepping.
//!
//! The injected phase enters through the left column at a fixed volumetric
//! rate per cell, the right column is connected to a constant-pressure
//! boundary, and the top and bottom are sealed. Pressure is solved for the
//! buildup `P − P_right`; saturation is advanced with explicit upwinding
//! and is never clipped, so the volume balance closes to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grf::{GridSpec, PermeabilityField};
use crate::tensor::Tensor;
use crate::train::binarize;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Pressure at which the rescaled value is zero, in Pa.
pub const INITIAL_PRESSURE: f64 = 1.2e7;

/// `P / 10⁷ − 1.2`
pub fn rescale_pressure(p: f64) -> f64 {
    p / 1e7 - 1.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridSpec,
    pub porosity: f64,
    /// Formation thickness in meters.
    pub thickness: f64,
    /// Volumetric injection rate into each left-column cell, m³/s.
    pub injection_rate: f64,
    pub right_boundary_pressure: f64,
    /// Seconds.
    pub total_time: f64,
    /// Seconds, strictly increasing.
    pub snapshot_times: Vec<f64>,
    pub corey_exponent: f64,
    /// Resident viscosity over injected viscosity.
    pub mobility_ratio: f64,
    /// Resident phase viscosity, Pa·s.
    pub resident_viscosity: f64,
    pub residual_resident: f64,
    pub residual_injected: f64,
    /// Fraction of the stability limit used per transport step.
    pub cfl: f64,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
}

/// Days of the desk preset snapshots; 150 lies between training times.
pub const DESK_SNAPSHOT_DAYS: [f64; 7] = [100.0, 120.0, 140.0, 150.0, 160.0, 180.0, 200.0];

impl SimConfig {
    pub fn desk() -> Self {
        Self::with_grid(GridSpec {
            height: 32,
            width: 32,
            cell_size: 10.0,
        })
    }

    pub fn paper() -> Self {
        Self::with_grid(GridSpec {
            height: 50,
            width: 50,
            cell_size: 10.0,
        })
    }

    pub fn with_grid(grid: GridSpec) -> Self {
        SimConfig {
            grid,
            porosity: 0.2,
            thickness: 1.0,
            injection_rate: 1e-5,
            right_boundary_pressure: INITIAL_PRESSURE,
            total_time: 200.0 * SECONDS_PER_DAY,
            snapshot_times: DESK_SNAPSHOT_DAYS.iter().map(|d| d * SECONDS_PER_DAY).collect(),
            corey_exponent: 2.0,
            mobility_ratio: 2.0,
            resident_viscosity: 1e-3,
            residual_resident: 0.0,
            residual_injected: 0.0,
            cfl: 0.5,
            solver_tolerance: 1e-10,
            solver_max_iterations: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("simulation: {m}")));
        if !(self.porosity > 0.0 && self.porosity <= 1.0) {
            return bad("porosity must lie in (0, 1]");
        }
        if !(self.thickness > 0.0) || !(self.injection_rate >= 0.0) || !(self.resident_viscosity > 0.0) {
            return bad("thickness and viscosity must be positive, rate non-negative");
        }
        if !(self.corey_exponent >= 1.0) || !(self.mobility_ratio > 0.0) {
            return bad("Corey exponent must be >= 1 and mobility ratio positive");
        }
        let (wr, gr) = (self.residual_resident, self.residual_injected);
        if !(wr >= 0.0 && gr >= 0.0 && wr + gr < 1.0) {
            return bad("residual saturations must be non-negative with sum below 1");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("CFL factor must lie in (0, 1]");
        }
        if self.snapshot_times.is_empty() || self.snapshot_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("snapshot times must be non-empty and strictly increasing");
        }
        if self.snapshot_times[0] <= 0.0 || *self.snapshot_times.last().unwrap() > self.total_time {
            return bad("snapshot times must lie in (0, total_time]");
        }
        Ok(())
    }

    pub fn injected_viscosity(&self) -> f64 {
        self.resident_viscosity / self.mobility_ratio
    }

    fn effective(&self, s: f64) -> f64 {
        let span = 1.0 - self.residual_resident - self.residual_injected;
        ((s - self.residual_injected) / span).clamp(0.0, 1.0)
    }

    /// Phase mobilities `(injected, resident)` at injected saturation `s`.
    pub fn mobilities(&self, s: f64) -> (f64, f64) {
        let se = self.effective(s);
        let n = self.corey_exponent;
        (se.powf(n) / self.injected_viscosity(), (1.0 - se).powf(n) / self.resident_viscosity)
    }

    pub fn total_mobility(&self, s: f64) -> f64 {
        let (g, w) = self.mobilities(s);
        g + w
    }

    /// Injected-phase fractional flow.
    pub fn fractional_flow(&self, s: f64) -> f64 {
        let (g, w) = self.mobilities(s);
        g / (g + w)
    }

    /// Upper bound on `|df/dS|` from a fine scan of the saturation range.
    pub fn max_fractional_slope(&self) -> f64 {
        let (lo, hi) = (self.residual_injected, 1.0 - self.residual_resident);
        let n = 4000;
        let h = (hi - lo) / n as f64;
        let slope = (0..n)
            .map(|i| {
                let a = lo + i as f64 * h;
                (self.fractional_flow(a + h) - self.fractional_flow(a)).abs() / h
            })
            .fold(0.0, f64::max);
        // secant slopes underestimate the peak slightly
        slope * 1.05
    }

    fn cell_volume(&self) -> f64 {
        self.grid.cell_size * self.grid.cell_size * self.thickness
    }

    fn pore_volume(&self) -> f64 {
        self.porosity * self.cell_volume()
    }
}

/// Interface transmissibilities for a given permeability and saturation.
#[derive(Clone, Debug)]
pub struct Transmissibility {
    h: usize,
    w: usize,
    /// Face between `(r, c)` and `(r, c+1)`, indexed `r·(W−1) + c`.
    x: Vec<f64>,
    /// Face between `(r, c)` and `(r+1, c)`, indexed `r·W + c`.
    y: Vec<f64>,
    /// Right boundary face of row `r`.
    right: Vec<f64>,
}

impl Transmissibility {
    pub fn new(k: &Tensor<f64>, s: &Tensor<f64>, config: &SimConfig) -> Result<Self> {
        let (h, w) = (config.grid.height, config.grid.width);
        k.expect_shape(&[h, w])?;
        s.expect_shape(&[h, w])?;
        let a: Vec<f64> = k
            .data()
            .iter()
            .zip(s.data())
            .map(|(&k, &s)| k * config.total_mobility(s))
            .collect();
        if a.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Data("permeability and mobility must be positive".into()));
        }
        // square cells: face area / center distance is the thickness
        let th = config.thickness;
        let harm = |p: f64, q: f64| th * 2.0 * p * q / (p + q);
        let mut x = Vec::with_capacity(h * w.saturating_sub(1));
        let mut y = Vec::with_capacity(h.saturating_sub(1) * w);
        for r in 0..h {
            for c in 0..w - 1 {
                x.push(harm(a[r * w + c], a[r * w + c + 1]));
            }
        }
        for r in 0..h - 1 {
            for c in 0..w {
                y.push(harm(a[r * w + c], a[(r + 1) * w + c]));
            }
        }
        let right = (0..h).map(|r| 2.0 * th * a[r * w + w - 1]).collect();
        Ok(Transmissibility { h, w, x, y, right })
    }

    fn diagonal(&self) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut d = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w - 1 {
                let t = self.x[r * (w - 1) + c];
                d[r * w + c] += t;
                d[r * w + c + 1] += t;
            }
            d[r * w + w - 1] += self.right[r];
        }
        for r in 0..h - 1 {
            for c in 0..w {
                let t = self.y[r * w + c];
                d[r * w + c] += t;
                d[(r + 1) * w + c] += t;
            }
        }
        d
    }

    /// `out = A·u` for the buildup system.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        out.fill(0.0);
        for r in 0..h {
            for c in 0..w - 1 {
                let (i, j) = (r * w + c, r * w + c + 1);
                let f = self.x[r * (w - 1) + c] * (u[i] - u[j]);
                out[i] += f;
                out[j] -= f;
            }
            let i = r * w + w - 1;
            out[i] += self.right[r] * u[i];
        }
        for r in 0..h - 1 {
            for c in 0..w {
                let (i, j) = (r * w + c, (r + 1) * w + c);
                let f = self.y[r * w + c] * (u[i] - u[j]);
                out[i] += f;
                out[j] -= f;
            }
        }
    }
}

fn sources(config: &SimConfig) -> Vec<f64> {
    let (h, w) = (config.grid.height, config.grid.width);
    let mut q = vec![0.0; h * w];
    for r in 0..h {
        q[r * w] += config.injection_rate;
    }
    q
}

/// Jacobi-preconditioned conjugate gradients. Returns the iteration count.
fn pcg(t: &Transmissibility, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let inv_d: Vec<f64> = t.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    t.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok(it);
        }
        t.apply(&p, &mut ap);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::LinearSolver {
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

/// Pressure field in Pa for permeability `k` (m², `[H,W]`) and saturation `s`.
pub fn solve_pressure(k: &PermeabilityField, s: &Tensor<f64>, config: &SimConfig) -> Result<Tensor<f64>> {
    let t = Transmissibility::new(&k.values, s, config)?;
    let mut u = vec![0.0; config.grid.cells()];
    pcg(&t, &sources(config), &mut u, config.solver_tolerance, config.solver_max_iterations)?;
    let p = u.iter().map(|v| v + config.right_boundary_pressure).collect();
    Tensor::from_vec(&[config.grid.height, config.grid.width], p)
}

/// Total volumetric fluxes across every face for a pressure field.
#[derive(Clone, Debug)]
pub struct Fluxes {
    h: usize,
    w: usize,
    /// Positive from `(r, c)` to `(r, c+1)`.
    pub x: Vec<f64>,
    /// Positive from `(r, c)` to `(r+1, c)`.
    pub y: Vec<f64>,
    /// Out of the domain through the right boundary, per row.
    pub right: Vec<f64>,
    /// Into each cell from sources.
    pub source: Vec<f64>,
}

impl Fluxes {
    pub fn new(t: &Transmissibility, pressure: &Tensor<f64>, config: &SimConfig) -> Self {
        let (h, w) = (t.h, t.w);
        let p = pressure.data();
        let mut x = Vec::with_capacity(t.x.len());
        for r in 0..h {
            for c in 0..w - 1 {
                x.push(t.x[r * (w - 1) + c] * (p[r * w + c] - p[r * w + c + 1]));
            }
        }
        let y = (0..h.saturating_sub(1) * w).map(|i| t.y[i] * (p[i] - p[i + w])).collect();
        let right = (0..h)
            .map(|r| t.right[r] * (p[r * w + w - 1] - config.right_boundary_pressure))
            .collect();
        Fluxes {
            h,
            w,
            x,
            y,
            right,
            source: sources(config),
        }
    }

    /// Net outflow minus source per cell; zero for an exact pressure solve.
    pub fn divergence(&self) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut d: Vec<f64> = self.source.iter().map(|q| -q).collect();
        for r in 0..h {
            for c in 0..w - 1 {
                let f = self.x[r * (w - 1) + c];
                d[r * w + c] += f;
                d[r * w + c + 1] -= f;
            }
            d[r * w + w - 1] += self.right[r];
        }
        for r in 0..h.saturating_sub(1) {
            for c in 0..w {
                let f = self.y[r * w + c];
                d[r * w + c] += f;
                d[(r + 1) * w + c] -= f;
            }
        }
        d
    }

    /// Sum of outgoing face fluxes per cell.
    fn outflow(&self) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w - 1 {
                let f = self.x[r * (w - 1) + c];
                if f > 0.0 {
                    out[r * w + c] += f;
                } else {
                    out[r * w + c + 1] -= f;
                }
            }
            out[r * w + w - 1] += self.right[r].max(0.0);
        }
        for r in 0..h.saturating_sub(1) {
            for c in 0..w {
                let f = self.y[r * w + c];
                if f > 0.0 {
                    out[r * w + c] += f;
                } else {
                    out[(r + 1) * w + c] -= f;
                }
            }
        }
        out
    }

    /// Largest stable transport step (before the CFL safety factor).
    pub fn stability_limit(&self, config: &SimConfig) -> f64 {
        let slope = config.max_fractional_slope();
        let worst = self.outflow().into_iter().fold(0.0, f64::max);
        if worst == 0.0 || slope == 0.0 {
            f64::INFINITY
        } else {
            config.pore_volume() / (slope * worst)
        }
    }
}

/// Injected-phase volume leaving through the right boundary per second.
fn boundary_outflow(s: &[f64], fluxes: &Fluxes, config: &SimConfig) -> f64 {
    let w = fluxes.w;
    (0..fluxes.h)
        .map(|r| {
            let f = fluxes.right[r];
            if f > 0.0 {
                f * config.fractional_flow(s[r * w + w - 1])
            } else {
                0.0
            }
        })
        .sum()
}

/// One explicit upwind transport step with precomputed fluxes.
pub fn advance_with_fluxes(s: &Tensor<f64>, fluxes: &Fluxes, dt: f64, config: &SimConfig) -> Result<Tensor<f64>> {
    let limit = fluxes.stability_limit(config);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    let (h, w) = (fluxes.h, fluxes.w);
    let sv = s.data();
    let f: Vec<f64> = sv.iter().map(|&v| config.fractional_flow(v)).collect();
    let mut net = vec![0.0; h * w];
    for (n, q) in net.iter_mut().zip(&fluxes.source) {
        *n += q;
    }
    for r in 0..h {
        for c in 0..w - 1 {
            let (i, j) = (r * w + c, r * w + c + 1);
            let q = fluxes.x[r * (w - 1) + c];
            let g = if q > 0.0 { q * f[i] } else { q * f[j] };
            net[i] -= g;
            net[j] += g;
        }
        let i = r * w + w - 1;
        let q = fluxes.right[r];
        // inflow across the fixed-pressure boundary carries resident fluid
        net[i] -= if q > 0.0 { q * f[i] } else { 0.0 };
    }
    for r in 0..h.saturating_sub(1) {
        for c in 0..w {
            let (i, j) = (r * w + c, (r + 1) * w + c);
            let q = fluxes.y[r * w + c];
            let g = if q > 0.0 { q * f[i] } else { q * f[j] };
            net[i] -= g;
            net[j] += g;
        }
    }
    let scale = dt / config.pore_volume();
    let next = sv.iter().zip(&net).map(|(&s, &n)| s + scale * n).collect();
    Tensor::from_vec(s.shape(), next)
}

/// Advance `s` by `dt` under pressure `p`.
pub fn advance_saturation(
    s: &Tensor<f64>,
    p: &Tensor<f64>,
    k: &PermeabilityField,
    dt: f64,
    config: &SimConfig,
) -> Result<Tensor<f64>> {
    let t = Transmissibility::new(&k.values, s, config)?;
    advance_with_fluxes(s, &Fluxes::new(&t, p, config), dt, config)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Seconds.
    pub time: f64,
    /// Pa, `[H,W]`.
    pub pressure: Tensor<f64>,
    pub rescaled_pressure: Tensor<f64>,
    pub saturation: Tensor<f64>,
    pub mask: Tensor<f64>,
    /// Injected-phase volume pumped in so far, m³.
    pub injected_volume: f64,
    /// Injected-phase volume that left through the right boundary, m³.
    pub outflow_volume: f64,
    /// Transport steps taken so far.
    pub steps: usize,
}

impl Snapshot {
    /// Injected-phase volume stored in the pore space.
    pub fn stored_volume(&self, config: &SimConfig) -> f64 {
        config.pore_volume() * self.saturation.data().iter().sum::<f64>()
    }

    /// `|stored − (injected − outflow)| / injected`
    pub fn balance_error(&self, config: &SimConfig) -> f64 {
        let expect = self.injected_volume - self.outflow_volume;
        (self.stored_volume(config) - expect).abs() / self.injected_volume.max(f64::MIN_POSITIVE)
    }
}

/// Run the IMPES loop from an uninvaded state, emitting one snapshot per
/// requested time.
pub fn simulate(k: &PermeabilityField, config: &SimConfig) -> Result<Vec<Snapshot>> {
    config.validate()?;
    let (h, w) = (config.grid.height, config.grid.width);
    k.values.expect_shape(&[h, w])?;
    let q_total = config.injection_rate * h as f64;
    let mut s = Tensor::full(&[h, w], config.residual_injected);
    let (mut t, mut outflow, mut steps) = (0.0f64, 0.0f64, 0usize);
    let mut snapshots = Vec::with_capacity(config.snapshot_times.len());
    let mut u = vec![0.0; h * w];
    let b = sources(config);
    let pressure_for = |s: &Tensor<f64>, u: &mut Vec<f64>| -> Result<(Transmissibility, Tensor<f64>)> {
        let tr = Transmissibility::new(&k.values, s, config)?;
        // warm start from the previous buildup
        pcg(&tr, &b, u, config.solver_tolerance, config.solver_max_iterations)?;
        let p = Tensor::from_vec(&[h, w], u.iter().map(|v| v + config.right_boundary_pressure).collect())?;
        Ok((tr, p))
    };
    for &target in &config.snapshot_times {
        while t < target {
            let (tr, p) = pressure_for(&s, &mut u)?;
            let fluxes = Fluxes::new(&tr, &p, config);
            let limit = fluxes.stability_limit(config);
            let mut dt = config.cfl * limit;
            if t + dt >= target {
                dt = target - t;
            }
            outflow += dt * boundary_outflow(s.data(), &fluxes, config);
            s = advance_with_fluxes(&s, &fluxes, dt, config)?;
            t = if t + dt >= target { target } else { t + dt };
            steps += 1;
        }
        let (_, p) = pressure_for(&s, &mut u)?;
        snapshots.push(Snapshot {
            time: target,
            rescaled_pressure: p.map(rescale_pressure),
            pressure: p,
            mask: binarize(&s),
            saturation: s.clone(),
            injected_volume: q_total * target,
            outflow_volume: outflow,
            steps,
        });
    }
    Ok(snapshots)
}
