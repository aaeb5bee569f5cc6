//! Dynamic Sinkhorn recursion for the Schrödinger system, monitored in
//! Hilbert's projective metric.

use crate::density::{DensitySpec, DENSITY_FLOOR};
use crate::error::{QsbError, Result};
use crate::exec::Exec;
use crate::grid::{GridSpec, KernelMatrix};

/// Hilbert projective distance `log max(u/v) - log min(u/v)`.
pub fn hilbert_metric(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(QsbError::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    for (i, &x) in u.iter().chain(v.iter()).enumerate() {
        if !(x > 0.0) || !x.is_finite() {
            return Err(QsbError::NonPositiveEntry { index: i % u.len().max(1), value: x });
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in u.iter().zip(v) {
        let r = a.ln() - b.ln();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(if u.is_empty() { 0.0 } else { hi - lo })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Stop when successive `φ̂₀` are closer than this in the Hilbert metric.
    pub tol: f64,
    pub max_epochs: usize,
    pub exec: Exec,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions { tol: 1e-10, max_epochs: 5000, exec: Exec::default() }
    }
}

/// Iterate output. `phihat0 ⊙ phi0 ≈ ρ₀` and `phihat1 ⊙ phi1 ≈ ρ₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub phihat0: Vec<f64>,
    pub phi0: Vec<f64>,
    pub phihat1: Vec<f64>,
    pub phi1: Vec<f64>,
    pub epoch: usize,
    /// Hilbert distance between successive `φ̂₀`, one entry per epoch.
    pub hilbert_trace: Vec<f64>,
    /// Weighted L1 residuals of both marginals, one entry per epoch.
    pub residual_trace: Vec<(f64, f64)>,
    pub converged: bool,
    pub residual0: f64,
    pub residual1: f64,
}

impl SinkhornState {
    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(QsbError::NotConverged {
                epochs: self.epoch,
                distance: self.hilbert_trace.last().copied().unwrap_or(f64::INFINITY),
            })
        }
    }

    /// Geometric contraction ratio from a least-squares fit of
    /// `log hilbert_trace` against epoch. The first entry (distance from the
    /// constant initial guess) and entries at round-off level are skipped.
    pub fn contraction_ratio(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .hilbert_trace
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &h)| h > 1e-12)
            .map(|(k, &h)| (k as f64, h.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some((sxy / sxx).exp())
    }

    /// The same solution in another gauge: `(c·φ̂, φ/c)`.
    pub fn regauged(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.phihat0.iter_mut().chain(s.phihat1.iter_mut()).for_each(|v| *v *= c);
        s.phi0.iter_mut().chain(s.phi1.iter_mut()).for_each(|v| *v /= c);
        s
    }
}

fn floored_ratio(num: &[f64], den: &[f64]) -> Vec<f64> {
    num.iter().zip(den).map(|(a, b)| a.max(DENSITY_FLOOR) / b.max(DENSITY_FLOOR)).collect()
}

fn weighted_l1(w: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).zip(c).map(|(((w, a), b), c)| w * (a * b - c).abs()).sum()
}

/// Discretize both endpoint densities on `grid` and solve.
pub fn sinkhorn_solve(
    rho0: &DensitySpec,
    rho1: &DensitySpec,
    grid: &GridSpec,
    k: &KernelMatrix,
    opts: &SinkhornOptions,
) -> Result<SinkhornState> {
    let r0 = rho0.discretize(grid)?.values;
    let r1 = rho1.discretize(grid)?.values;
    sinkhorn_solve_discrete(&r0, &r1, k, opts)
}

/// Solve the discrete Schrödinger system for node values `rho0`, `rho1`
/// (weighted sums one). Hitting `max_epochs` is not an error here: the
/// state comes back with `converged = false`.
pub fn sinkhorn_solve_discrete(rho0: &[f64], rho1: &[f64], k: &KernelMatrix, opts: &SinkhornOptions) -> Result<SinkhornState> {
    let n = k.n();
    for r in [rho0, rho1] {
        if r.len() != n {
            return Err(QsbError::DimensionMismatch { expected: n, got: r.len() });
        }
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(QsbError::NonPositiveDensity("endpoint density has negative or non-finite values".into()));
        }
        if !r.iter().any(|&v| v > 0.0) {
            return Err(QsbError::NonPositiveDensity("endpoint density vanishes on the grid".into()));
        }
    }
    if !(opts.tol > 0.0) {
        return Err(QsbError::InvalidArgument(format!("tol must be positive, got {}", opts.tol)));
    }
    let w = k.weights();
    let r0: Vec<f64> = rho0.iter().map(|v| v.max(DENSITY_FLOOR)).collect();
    let r1: Vec<f64> = rho1.iter().map(|v| v.max(DENSITY_FLOOR)).collect();

    let mut phihat0 = vec![1.0 / w.iter().sum::<f64>(); n];
    let mut fwd = k.forward_with(&phihat0, opts.exec)?;
    let mut state = SinkhornState {
        phihat0: Vec::new(),
        phi0: Vec::new(),
        phihat1: Vec::new(),
        phi1: Vec::new(),
        epoch: 0,
        hilbert_trace: Vec::new(),
        residual_trace: Vec::new(),
        converged: false,
        residual0: f64::INFINITY,
        residual1: f64::INFINITY,
    };
    let mut phi0 = vec![0.0; n];
    let mut phi1 = vec![0.0; n];
    while state.epoch < opts.max_epochs {
        phi1 = floored_ratio(&r1, &fwd);
        phi0 = k.backward_with(&phi1, opts.exec)?;
        let mut next = floored_ratio(&r0, &phi0);
        let c: f64 = w.iter().zip(&next).map(|(w, v)| w * v).sum();
        next.iter_mut().for_each(|v| *v /= c);
        phi1.iter_mut().chain(phi0.iter_mut()).for_each(|v| *v *= c);
        let h = hilbert_metric(&next, &phihat0)?;
        phihat0 = next;
        fwd = k.forward_with(&phihat0, opts.exec)?;
        state.epoch += 1;
        state.hilbert_trace.push(h);
        state.residual0 = weighted_l1(w, &phihat0, &phi0, rho0);
        state.residual1 = weighted_l1(w, &phi1, &fwd, rho1);
        state.residual_trace.push((state.residual0, state.residual1));
        log::trace!("sinkhorn epoch {} hilbert {:.3e} residual1 {:.3e}", state.epoch, h, state.residual1);
        if h < opts.tol {
            state.converged = true;
            break;
        }
    }
    state.phihat0 = phihat0;
    state.phi0 = phi0;
    state.phihat1 = fwd;
    state.phi1 = phi1;
    if !state.converged {
        log::warn!("sinkhorn stopped after {} epochs without reaching tol {:e}", state.epoch, opts.tol);
    }
    Ok(state)
}
