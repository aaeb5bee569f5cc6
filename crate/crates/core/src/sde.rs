//! Closed-loop Euler–Maruyama simulation of `dx = u_opt(t, x) dt + √2 dw`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bridge::{BridgeSolution, ControlField};
use crate::density::DensitySpec;
use crate::error::{QsbError, Result};
use crate::exec::Exec;
use crate::grid::GridSpec;

/// Recorded in run manifests.
pub const RNG_DESCRIPTION: &str = "ChaCha8 (rand_chacha), stream = path index, seed_from_u64(seed); normals via rand_distr StandardNormal (ziggurat)";

/// Step times `t0, t0+dt, ..., t1` (the last step is shortened to land on
/// `t1`) with the control field at every step start.
#[derive(Debug, Clone)]
pub struct ControlSchedule {
    times: Vec<f64>,
    fields: Vec<ControlField>,
    grid: GridSpec,
}

impl ControlSchedule {
    pub fn new(sol: &BridgeSolution, dt: f64) -> Result<Self> {
        let (t0, t1) = (sol.t0(), sol.t1());
        if !(dt > 0.0) || dt > (t1 - t0) / 50.0 {
            return Err(QsbError::InvalidArgument(format!("dt must lie in (0, {}], got {dt}", (t1 - t0) / 50.0)));
        }
        let n_steps = ((t1 - t0) / dt - 1e-9).ceil() as usize;
        let mut times: Vec<f64> = (0..n_steps).map(|k| t0 + k as f64 * dt).collect();
        times.push(t1);
        let fields = sol.exec().map(n_steps, |k| sol.control_field(times[k]));
        let fields = fields.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(ControlSchedule { times, fields, grid: sol.grid().clone() })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.fields.len()
    }

    pub fn field(&self, k: usize) -> &ControlField {
        &self.fields[k]
    }

    /// Simulate `n_paths` paths started from i.i.d. draws of `rho0`.
    pub fn simulate(&self, rho0: &DensitySpec, n_paths: usize, seed: u64, exec: Exec) -> Result<PathEnsemble> {
        if n_paths == 0 {
            return Err(QsbError::InvalidArgument("n_paths must be at least 1".into()));
        }
        let dim = self.grid.dim();
        if rho0.dim() != dim {
            return Err(QsbError::DimensionMismatch { expected: dim, got: rho0.dim() });
        }
        let sampler = rho0.sampler();
        let stride = self.times.len() * dim;
        let runs = exec.map(n_paths, |p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut path = Vec::with_capacity(stride);
            let mut x = sampler.sample(&mut rng);
            let mut clamps = 0usize;
            if self.grid.clamp(&mut x) {
                clamps += 1;
            }
            path.extend_from_slice(&x);
            let mut u = vec![0.0; dim];
            for k in 0..self.fields.len() {
                let h = self.times[k + 1] - self.times[k];
                self.fields[k].eval_into(&x, &mut u);
                let s = (2.0 * h).sqrt();
                for (xi, ui) in x.iter_mut().zip(&u) {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi += ui * h + s * z;
                }
                if self.grid.clamp(&mut x) {
                    clamps += 1;
                }
                path.extend_from_slice(&x);
            }
            (path, clamps)
        });
        let mut paths = Vec::with_capacity(n_paths * stride);
        let mut clamp_counts = Vec::with_capacity(n_paths);
        for (p, c) in runs {
            paths.extend(p);
            clamp_counts.push(c);
        }
        Ok(PathEnsemble { n_paths, dim, dt: self.times[1] - self.times[0], seed, times: self.times.clone(), paths, clamp_counts })
    }
}

/// Build the schedule and simulate in one call.
pub fn simulate_paths(sol: &BridgeSolution, rho0: &DensitySpec, n_paths: usize, dt: f64, seed: u64) -> Result<PathEnsemble> {
    ControlSchedule::new(sol, dt)?.simulate(rho0, n_paths, seed, sol.exec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub dim: usize,
    pub dt: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `n_paths × times.len() × dim`, row-major.
    pub paths: Vec<f64>,
    /// Steps at which each path was clamped back onto the grid.
    pub clamp_counts: Vec<usize>,
}

impl PathEnsemble {
    /// Position of path `p` at step `k`.
    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let off = (p * self.times.len() + k) * self.dim;
        &self.paths[off..off + self.dim]
    }

    pub fn initial(&self, p: usize) -> &[f64] {
        self.state(p, 0)
    }

    pub fn terminal(&self, p: usize) -> &[f64] {
        self.state(p, self.times.len() - 1)
    }

    pub fn terminal_samples(&self) -> Vec<Vec<f64>> {
        (0..self.n_paths).map(|p| self.terminal(p).to_vec()).collect()
    }

    /// `E|x_t|²` averaged over paths and over the step times (trapezoid in t).
    pub fn time_averaged_second_moment(&self) -> f64 {
        let nt = self.times.len();
        let m: Vec<f64> = (0..nt)
            .map(|k| (0..self.n_paths).map(|p| self.state(p, k).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / self.n_paths as f64)
            .collect();
        let span = self.times[nt - 1] - self.times[0];
        (1..nt).map(|k| 0.5 * (m[k] + m[k - 1]) * (self.times[k] - self.times[k - 1])).sum::<f64>() / span
    }

    pub fn total_clamps(&self) -> usize {
        self.clamp_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointStats {
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// Kolmogorov–Smirnov statistic per marginal.
    pub ks: Vec<f64>,
}

/// Kolmogorov–Smirnov distance between `samples` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            f64::max((i + 1) as f64 / n - f, f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

pub fn sample_stats(samples: &[Vec<f64>], target: &DensitySpec) -> EndpointStats {
    let n = samples.len();
    let dim = target.dim();
    let mean: Vec<f64> = (0..dim).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n as f64).collect();
    let cov = (0..dim)
        .map(|r| {
            (0..dim)
                .map(|c| samples.iter().map(|s| (s[r] - mean[r]) * (s[c] - mean[c])).sum::<f64>() / (n as f64 - 1.0).max(1.0))
                .collect()
        })
        .collect();
    let ks = (0..dim)
        .map(|k| {
            let xs: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            ks_statistic(&xs, |x| target.marginal_cdf(k, x))
        })
        .collect();
    EndpointStats { n, mean, cov, ks }
}

/// Terminal mean, covariance and per-marginal KS against `rho1`.
pub fn endpoint_stats(ens: &PathEnsemble, rho1: &DensitySpec) -> EndpointStats {
    sample_stats(&ens.terminal_samples(), rho1)
}
