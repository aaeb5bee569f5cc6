//! The solved bridge at interior times: Schrödinger factors, the optimal
//! density `φ̂·φ` and the optimal drift.
//!
//! With diffusion `dx = u dt + √2 dw` the Fokker–Planck equation reads
//! `∂ρ = -∇·(ρu) + Δρ`, and `ρ = φ̂φ` satisfies it for `u = 2∇log φ`; the
//! factor of two is the diffusion coefficient `σσᵀ = 2I`.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use crate::density::DENSITY_FLOOR;
use crate::error::{QsbError, Result};
use crate::exec::Exec;
use crate::grid::{eigen_nodes, interp_uniform, propagate_eigen, GridSpec};
use crate::kernels::KernelPlan;
use crate::sinkhorn::SinkhornState;
use crate::spectral::SpectralQ;

const CACHE_CAPACITY: usize = 64;
const TIME_QUANTUM: f64 = 1e-12;

/// Drift per unit of `∇log φ`.
pub const DRIFT_SCALE: f64 = 2.0;

/// Both factors on the grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub t: f64,
    pub phihat: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Factors {
    pub fn rho(&self) -> Vec<f64> {
        self.phihat.iter().zip(&self.phi).map(|(a, b)| a * b).collect()
    }
}

#[derive(Default)]
struct FactorCache {
    map: HashMap<i64, Arc<Factors>>,
    order: VecDeque<i64>,
}

pub struct BridgeSolution {
    state: SinkhornState,
    grid: GridSpec,
    spec: SpectralQ,
    t0: f64,
    t1: f64,
    eig: Vec<f64>,
    exec: Exec,
    cache: Mutex<FactorCache>,
}

impl std::fmt::Debug for BridgeSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeSolution")
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("nodes", &self.grid.len())
            .field("epoch", &self.state.epoch)
            .finish()
    }
}

impl BridgeSolution {
    pub fn new(state: SinkhornState, grid: GridSpec, spec: SpectralQ, t0: f64, t1: f64) -> Result<Self> {
        crate::error::check_times(t0, t1)?;
        if spec.dim() != grid.dim() {
            return Err(QsbError::DimensionMismatch { expected: grid.dim(), got: spec.dim() });
        }
        for v in [&state.phihat0, &state.phi0, &state.phihat1, &state.phi1] {
            if v.len() != grid.len() {
                return Err(QsbError::DimensionMismatch { expected: grid.len(), got: v.len() });
            }
        }
        let eig = eigen_nodes(&grid, &spec);
        Ok(BridgeSolution { state, grid, spec, t0, t1, eig, exec: Exec::default(), cache: Mutex::default() })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn state(&self) -> &SinkhornState {
        &self.state
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn spec(&self) -> &SpectralQ {
        &self.spec
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(t >= self.t0 && t <= self.t1) {
            return Err(QsbError::TimeOutOfHorizon { t, t0: self.t0, t1: self.t1 });
        }
        Ok(())
    }

    fn propagate(&self, tau: f64, f: &[f64]) -> Result<Vec<f64>> {
        let plan = KernelPlan::new(&self.spec, tau)?;
        Ok(propagate_eigen(&plan, &self.eig, self.grid.dim(), self.grid.weights(), f, self.exec))
    }

    /// `φ̂(t,·)` propagated forward from `φ̂₀` and `φ(t,·)` backward from
    /// `φ₁`. The endpoints return the Sinkhorn vectors unchanged.
    pub fn factors_at(&self, t: f64) -> Result<Arc<Factors>> {
        self.check_t(t)?;
        let key = (t / TIME_QUANTUM).round() as i64;
        if let Some(f) = self.cache.lock().expect("factor cache poisoned").map.get(&key) {
            return Ok(Arc::clone(f));
        }
        let s = &self.state;
        let (phihat, phi) = if t == self.t0 {
            (s.phihat0.clone(), s.phi0.clone())
        } else if t == self.t1 {
            (s.phihat1.clone(), s.phi1.clone())
        } else {
            (self.propagate(t - self.t0, &s.phihat0)?, self.propagate(self.t1 - t, &s.phi1)?)
        };
        let f = Arc::new(Factors { t, phihat, phi });
        let mut cache = self.cache.lock().expect("factor cache poisoned");
        if !cache.map.contains_key(&key) {
            if cache.order.len() == CACHE_CAPACITY {
                if let Some(old) = cache.order.pop_front() {
                    cache.map.remove(&old);
                }
            }
            cache.order.push_back(key);
            cache.map.insert(key, Arc::clone(&f));
        }
        Ok(f)
    }

    /// `ρ_opt(t,·) = φ̂ ⊙ φ`, not renormalized.
    pub fn rho_opt(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.factors_at(t)?.rho())
    }

    /// Only `φ(t,·)`, skipping the forward propagation.
    pub fn phi_at(&self, t: f64) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if let Some(f) = self.cache.lock().expect("factor cache poisoned").map.get(&((t / TIME_QUANTUM).round() as i64)) {
            return Ok(f.phi.clone());
        }
        if t == self.t0 {
            Ok(self.state.phi0.clone())
        } else if t == self.t1 {
            Ok(self.state.phi1.clone())
        } else {
            self.propagate(self.t1 - t, &self.state.phi1)
        }
    }

    pub fn control_field(&self, t: f64) -> Result<ControlField> {
        let phi = self.phi_at(t)?;
        let floored = phi.iter().filter(|&&v| v < DENSITY_FLOOR).count();
        let log_phi = phi.iter().map(|v| v.max(DENSITY_FLOOR).ln()).collect();
        let mut field = ControlField::from_log_values(&self.grid, log_phi)?;
        field.floored = floored;
        Ok(field)
    }

    /// `u_opt(t, x) = 2∇log φ(t, x)`. `x` must stay one spacing inside the
    /// grid bounds.
    pub fn u_opt(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.grid.dim() {
            return Err(QsbError::DimensionMismatch { expected: self.grid.dim(), got: x.len() });
        }
        for (k, &v) in x.iter().enumerate() {
            let (lo, hi) = (self.grid.lower()[k] + self.grid.spacing()[k], self.grid.upper()[k] - self.grid.spacing()[k]);
            if !(v >= lo && v <= hi) {
                return Err(QsbError::QueryOutOfBounds { dim: k, value: v, lower: lo, upper: hi });
            }
        }
        Ok(self.control_field(t)?.eval(x))
    }
}

/// `∇log φ` on the grid by central differences (one-sided at the edges),
/// multilinearly interpolated between nodes. [`ControlField::eval`] returns
/// the drift `2∇log φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    lower: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
    pub log_phi: Vec<f64>,
    /// One node vector per dimension.
    pub grad: Vec<Vec<f64>>,
    /// Nodes where `φ` fell below the floor before the logarithm.
    pub floored: usize,
}

impl ControlField {
    pub fn from_log_values(grid: &GridSpec, log_phi: Vec<f64>) -> Result<Self> {
        if log_phi.len() != grid.len() {
            return Err(QsbError::DimensionMismatch { expected: grid.len(), got: log_phi.len() });
        }
        let counts = grid.counts().to_vec();
        let dim = counts.len();
        let strides: Vec<usize> = (0..dim).map(|k| counts[k + 1..].iter().product()).collect();
        let grad = (0..dim)
            .map(|k| {
                let (h, n, s) = (grid.spacing()[k], counts[k], strides[k]);
                (0..grid.len())
                    .map(|i| {
                        let pos = (i / s) % n;
                        if pos == 0 {
                            (log_phi[i + s] - log_phi[i]) / h
                        } else if pos == n - 1 {
                            (log_phi[i] - log_phi[i - s]) / h
                        } else {
                            (log_phi[i + s] - log_phi[i - s]) / (2.0 * h)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(ControlField {
            lower: grid.lower().to_vec(),
            spacing: grid.spacing().to_vec(),
            counts,
            log_phi,
            grad,
            floored: 0,
        })
    }

    /// Interpolated `∇log φ`; queries outside the grid are clamped.
    pub fn grad_at(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| interp_uniform(&self.lower, &self.spacing, &self.counts, g, x)).collect()
    }

    /// Interpolated drift `2∇log φ`; queries outside the grid are clamped.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grad.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = DRIFT_SCALE * interp_uniform(&self.lower, &self.spacing, &self.counts, g, x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DensitySpec, Gaussian};
    use crate::grid::{assemble_kernel_matrix, build_grid};
    use crate::sinkhorn::{sinkhorn_solve, SinkhornOptions};

    fn self_bridge() -> BridgeSolution {
        let g = build_grid(&[(-4.0, 4.0)], &[241]).unwrap();
        let spec = SpectralQ::diagonal(&[0.0]).unwrap();
        let rho = DensitySpec::Gaussian(Gaussian::scalar(0.0, 0.6).unwrap());
        let k = assemble_kernel_matrix(&g, 0.0, 0.5, &spec).unwrap();
        let s = sinkhorn_solve(&rho, &rho, &g, &k, &SinkhornOptions::default()).unwrap();
        BridgeSolution::new(s, g, spec, 0.0, 0.5).unwrap()
    }

    #[test]
    fn endpoints_reproduce_marginals() {
        let b = self_bridge();
        let rho = DensitySpec::Gaussian(Gaussian::scalar(0.0, 0.6).unwrap()).discretize(b.grid()).unwrap().values;
        for t in [0.0, 0.5] {
            let r = b.rho_opt(t).unwrap();
            assert!(b.grid().l1_distance(&r, &rho) < 1e-8);
        }
        let mid = b.rho_opt(0.25).unwrap();
        assert!((b.grid().integrate(&mid) - 1.0).abs() < 1e-6);
        let mean: f64 = (0..mid.len()).map(|i| b.grid().weights()[i] * b.grid().node(i)[0] * mid[i]).sum();
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn control_pulls_to_origin() {
        let b = self_bridge();
        for x in [-1.0, -0.5, -0.1, 0.1, 0.5, 1.0] {
            let u = b.u_opt(0.25, &[x]).unwrap()[0];
            assert_eq!(u.signum(), -f64::signum(x));
        }
        assert!(b.u_opt(0.25, &[0.0]).unwrap()[0].abs() < 1e-8);
    }

    #[test]
    fn query_errors() {
        let b = self_bridge();
        assert!(matches!(b.u_opt(0.25, &[3.99]), Err(QsbError::QueryOutOfBounds { .. })));
        assert!(matches!(b.factors_at(0.6), Err(QsbError::TimeOutOfHorizon { .. })));
        assert!(matches!(b.factors_at(-0.1), Err(QsbError::TimeOutOfHorizon { .. })));
    }

    #[test]
    fn cache_returns_same_factors() {
        let b = self_bridge();
        let a = b.factors_at(0.3).unwrap();
        let c = b.factors_at(0.3 + 1e-14).unwrap();
        assert!(Arc::ptr_eq(&a, &c));
        assert_eq!(b.phi_at(0.3).unwrap(), a.phi);
    }

    #[test]
    fn gradient_of_quadratic_log() {
        let g = build_grid(&[(-1.0, 1.0), (-2.0, 2.0)], &[21, 41]).unwrap();
        let log_phi = (0..g.len()).map(|i| {
            let x = g.node(i);
            -x[0] * x[0] + 0.5 * x[1]
        });
        let f = ControlField::from_log_values(&g, log_phi.collect()).unwrap();
        let u = f.grad_at(&[0.3, 0.7]);
        assert!((u[0] + 0.6).abs() < 1e-12);
        assert!((u[1] - 0.5).abs() < 1e-12);
        assert_eq!(f.eval(&[0.3, 0.7]), vec![2.0 * u[0], 2.0 * u[1]]);
    }
}
