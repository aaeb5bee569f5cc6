//! Closed-form Markov kernels of the factor PDEs.
//!
//! All kernels are returned in log-space ([`KernelEval`]). Times enter only
//! through the elapsed time `τ = t - t0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_times, QsbError, Result};
use crate::hyperbolic;
use crate::spectral::SpectralQ;

/// A kernel value held as its logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub log_value: f64,
}

impl KernelEval {
    pub fn value(self) -> f64 {
        self.log_value.exp()
    }
}

impl From<f64> for KernelEval {
    fn from(log_value: f64) -> Self {
        KernelEval { log_value }
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(QsbError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// Heat kernel of `dx = √2 dw`: `(4π(t-s))^{-n/2} exp(-|x-y|²/(4(t-s)))`.
pub fn heat_kernel(s: f64, x: &[f64], t: f64, y: &[f64]) -> Result<KernelEval> {
    let tau = check_times(s, t)?;
    same_len(x, y)?;
    let n = x.len() as f64;
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-0.5 * n * (4.0 * PI * tau).ln() - r2 / (4.0 * tau)).into())
}

/// Kernel for positive diagonal `D` in eigen-coordinates:
///
/// `ln κ = ¼Σ ln dᵢ - (m/2) ln 2π - ½Σ ln sinh(2τ√dᵢ)
///        - ½Σ √dᵢ [coth(2τ√dᵢ)(yᵢ²+zᵢ²) - 2 csch(2τ√dᵢ) yᵢzᵢ]`.
pub fn kernel_pp(t0: f64, y: &[f64], t: f64, z: &[f64], d_pos: &[f64]) -> Result<KernelEval> {
    let tau = check_times(t0, t)?;
    same_len(y, d_pos)?;
    same_len(z, d_pos)?;
    let mut log_value = -0.5 * d_pos.len() as f64 * (2.0 * PI).ln();
    for ((&yi, &zi), &d) in y.iter().zip(z).zip(d_pos) {
        if !(d > 0.0) || !d.is_finite() {
            return Err(QsbError::NonPositiveEigenvalue(d));
        }
        let s = d.sqrt();
        let arg = 2.0 * tau * s;
        let quad = s * (hyperbolic::coth(arg) * (yi * yi + zi * zi) - 2.0 * hyperbolic::csch(arg) * yi * zi);
        log_value += 0.25 * d.ln() - 0.5 * hyperbolic::ln_sinh(arg) - 0.5 * quad;
    }
    Ok(log_value.into())
}

/// Kernel for nonnegative diagonal `D`: `κ++` on the positive coordinates
/// times the heat kernel on the zero coordinates (eigen-coordinates).
pub fn kernel_p(t0: f64, y: &[f64], t: f64, z: &[f64], spec: &SpectralQ) -> Result<KernelEval> {
    check_times(t0, t)?;
    same_len(y, spec.d())?;
    same_len(z, spec.d())?;
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let mut log_value = 0.0;
    if !spec.positive_idx().is_empty() {
        let p = spec.positive_idx();
        log_value += kernel_pp(t0, &pick(y, p), t, &pick(z, p), &spec.positive_d())?.log_value;
    }
    if !spec.zero_idx().is_empty() {
        let zi = spec.zero_idx();
        log_value += heat_kernel(t0, &pick(y, zi), t, &pick(z, zi))?.log_value;
    }
    Ok(log_value.into())
}

/// The kernel in original coordinates: [`kernel_p`] at `(Vx, Vx2)`.
pub fn kernel_q(t0: f64, x: &[f64], t: f64, x2: &[f64], spec: &SpectralQ) -> Result<KernelEval> {
    same_len(x, spec.d())?;
    same_len(x2, spec.d())?;
    kernel_p(t0, &spec.to_eigen(x), t, &spec.to_eigen(x2), spec)
}

/// Total mass `∫∫ κ++ dy dz = (2π)^{m/2} ∏ᵢ (√dᵢ sinh(2τ√dᵢ))^{-1/2}`.
/// Not one: the reaction term creates and kills mass.
pub fn kernel_mass(t0: f64, t: f64, d_pos: &[f64]) -> Result<f64> {
    let tau = check_times(t0, t)?;
    let mut log_mass = 0.5 * d_pos.len() as f64 * (2.0 * PI).ln();
    for &d in d_pos {
        if !(d > 0.0) {
            return Err(QsbError::NonPositiveEigenvalue(d));
        }
        let s = d.sqrt();
        log_mass -= 0.5 * (s.ln() + hyperbolic::ln_sinh(2.0 * tau * s));
    }
    Ok(log_mass.exp())
}

/// Multivariate Mehler kernel
/// `(2π sinh 2τ)^{-n/2} exp(csch(2τ)⟨y,z⟩ - ½coth(2τ)(|y|²+|z|²))`.
pub fn mehler_kernel(t0: f64, y: &[f64], t: f64, z: &[f64]) -> Result<KernelEval> {
    let tau = check_times(t0, t)?;
    same_len(y, z)?;
    let n = y.len() as f64;
    let arg = 2.0 * tau;
    let yz: f64 = y.iter().zip(z).map(|(a, b)| a * b).sum();
    let r2: f64 = y.iter().chain(z).map(|a| a * a).sum();
    let log_value = -0.5 * n * ((2.0 * PI).ln() + hyperbolic::ln_sinh(arg)) + hyperbolic::csch(arg) * yz
        - 0.5 * hyperbolic::coth(arg) * r2;
    Ok(log_value.into())
}

/// Controllability Gramian `∫₀^τ e^{(τ-s)A} B Bᵀ e^{(τ-s)Aᵀ} ds` of a
/// time-invariant pair by the composite trapezoid rule.
pub fn controllability_gramian(a: &DMatrix<f64>, b: &DMatrix<f64>, tau: f64, steps: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(QsbError::DimensionMismatch { expected: n, got: b.nrows() });
    }
    if !(tau > 0.0) {
        return Err(QsbError::NonPositiveTau(tau));
    }
    let steps = steps.max(1);
    let h = tau / steps as f64;
    let bbt = b * b.transpose();
    let mut gram = DMatrix::zeros(n, n);
    for k in 0..=steps {
        let phi = (a * (tau - h * k as f64)).exp();
        let w = if k == 0 || k == steps { 0.5 * h } else { h };
        gram += (&phi * &bbt * phi.transpose()) * w;
    }
    Ok((&gram + gram.transpose()) * 0.5)
}

/// Default number of trapezoid steps for the Gramian.
pub const GRAMIAN_STEPS: usize = 200;

/// Gramian minimum eigenvalue below which the pair counts as uncontrollable.
pub const GRAMIAN_TOL: f64 = 1e-10;

/// Kernel of the linear prior `dx = Ax dt + √2 B dw` (time-invariant `A`, `B`):
///
/// `(4πτ)^{-n/2} det(Γ̄)^{-1/2} exp(-(Φx0 - x1)ᵀ Γ̄⁻¹ (Φx0 - x1) / (4τ))`
///
/// with `Φ = e^{τA}` and the time-normalized Gramian `Γ̄ = Γ/τ`, so that
/// `A = 0, B = I` reproduces the heat kernel.
pub fn kernel_linear(
    t0: f64,
    x0: &[f64],
    t1: f64,
    x1: &[f64],
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gramian_steps: usize,
) -> Result<KernelEval> {
    let tau = check_times(t0, t1)?;
    let n = a.nrows();
    same_len(x0, x1)?;
    if x0.len() != n {
        return Err(QsbError::DimensionMismatch { expected: n, got: x0.len() });
    }
    let gram = controllability_gramian(a, b, tau, gramian_steps)? / tau;
    let min_eig = SymmetricEigen::new(gram.clone()).eigenvalues.min();
    if !(min_eig > GRAMIAN_TOL) {
        return Err(QsbError::SingularGramian { min_eigenvalue: min_eig });
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(QsbError::SingularGramian { min_eigenvalue: min_eig })?;
    let phi = (a * tau).exp();
    let r = &phi * DVector::from_column_slice(x0) - DVector::from_column_slice(x1);
    let sol = chol.solve(&r);
    let quad = r.dot(&sol);
    let log_det: f64 = chol.l().diagonal().iter().map(|l| 2.0 * l.ln()).sum();
    let log_value = -0.5 * n as f64 * (4.0 * PI * tau).ln() - 0.5 * log_det - quad / (4.0 * tau);
    Ok(log_value.into())
}

/// Precomputed evaluator of the kernel in original coordinates at a fixed
/// elapsed time.
///
/// In eigen-coordinates every dimension contributes
/// `-½ [a (y-z)² + c y z]` to the exponent, with `a = √d coth(2τ√d)`,
/// `c = 2√d tanh(τ√d)` for `d > 0` and `a = 1/(2τ)`, `c = 0` for `d = 0`.
/// This is an algebraic rearrangement of the `coth`/`csch` form that stays
/// accurate as `d → 0`.
#[derive(Debug, Clone)]
pub struct KernelPlan {
    tau: f64,
    log_norm: f64,
    diff: Vec<f64>,
    cross: Vec<f64>,
    spec: SpectralQ,
}

impl KernelPlan {
    pub fn new(spec: &SpectralQ, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(QsbError::NonMonotoneTime { t0: 0.0, t: tau });
        }
        let mut log_norm = 0.0;
        let mut diff = Vec::with_capacity(spec.dim());
        let mut cross = Vec::with_capacity(spec.dim());
        for &d in spec.d() {
            if d > 0.0 {
                let s = d.sqrt();
                let arg = 2.0 * tau * s;
                log_norm += 0.25 * d.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * hyperbolic::ln_sinh(arg);
                diff.push(s * hyperbolic::coth(arg));
                cross.push(2.0 * s * hyperbolic::tanh_half(arg));
            } else {
                log_norm -= 0.5 * (4.0 * PI * tau).ln();
                diff.push(0.5 / tau);
                cross.push(0.0);
            }
        }
        Ok(KernelPlan { tau, log_norm, diff, cross, spec: spec.clone() })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn spec(&self) -> &SpectralQ {
        &self.spec
    }

    /// Log-kernel between two points already in eigen-coordinates.
    #[inline]
    pub fn log_eigen(&self, y: &[f64], z: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..self.diff.len() {
            let (a, b) = (y[i], z[i]);
            q += self.diff[i] * (a - b) * (a - b) + self.cross[i] * a * b;
        }
        self.log_norm - 0.5 * q
    }

    /// Log-kernel between two points in original coordinates.
    pub fn log_kernel(&self, x: &[f64], x2: &[f64]) -> f64 {
        self.log_eigen(&self.spec.to_eigen(x), &self.spec.to_eigen(x2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    const SQRT_2PI: f64 = 2.5066282746310002;

    #[test]
    fn heat_kernel_values() {
        let k = heat_kernel(0.0, &[0.0], 1.0, &[0.0]).unwrap().value();
        assert!((k - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
        assert!((k - 0.28209479177387814).abs() < 1e-15);
        let k = heat_kernel(0.0, &[1.0], 0.5, &[0.0]).unwrap().value();
        assert!((k - (-0.5f64).exp() / SQRT_2PI).abs() < 1e-15);
        assert!(matches!(heat_kernel(1.0, &[0.0], 1.0, &[0.0]), Err(QsbError::NonMonotoneTime { .. })));
        let a = heat_kernel(0.0, &[0.3, -1.2], 1.0, &[2.0, 0.1]).unwrap();
        let b = heat_kernel(0.0, &[2.0, 0.1], 1.0, &[0.3, -1.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_pp_at_origin_is_mehler() {
        let k = kernel_pp(0.0, &[0.0], 1.0, &[0.0], &[1.0]).unwrap().value();
        let expect = 1.0 / (2.0 * PI * 2.0f64.sinh()).sqrt();
        assert!((k - expect).abs() < 1e-15);
        let m = mehler_kernel(0.0, &[0.0], 1.0, &[0.0]).unwrap().value();
        assert!((k - m).abs() < 1e-15);
        let m = mehler_kernel(0.0, &[0.0], 0.5, &[0.0]).unwrap().value();
        assert!((m - 1.0 / (2.0 * PI * 1.0f64.sinh()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kernel_pp_tiny_d_is_heat() {
        let a = kernel_pp(0.0, &[0.3], 1.0, &[-0.2], &[1e-12]).unwrap().value();
        let b = heat_kernel(0.0, &[0.3], 1.0, &[-0.2]).unwrap().value();
        assert!((a - b).abs() / b < 1e-5);
    }

    #[test]
    fn kernel_pp_errors() {
        assert!(matches!(kernel_pp(0.0, &[0.0], 1.0, &[0.0], &[0.0]), Err(QsbError::NonPositiveEigenvalue(_))));
        assert!(matches!(kernel_pp(1.0, &[0.0], 0.5, &[0.0], &[1.0]), Err(QsbError::NonMonotoneTime { .. })));
    }

    #[test]
    fn kernel_p_factorizes() {
        let zero = SpectralQ::diagonal(&[0.0, 0.0]).unwrap();
        let (y, z) = ([0.2, 0.4], [-0.1, 0.3]);
        let a = kernel_p(0.0, &y, 1.0, &z, &zero).unwrap();
        let b = heat_kernel(0.0, &y, 1.0, &z).unwrap();
        assert!((a.log_value - b.log_value).abs() < 1e-14);

        let mixed = SpectralQ::diagonal(&[1.0, 0.0]).unwrap();
        let k = kernel_p(0.0, &y, 1.0, &z, &mixed).unwrap().log_value;
        let pp = kernel_pp(0.0, &y[..1], 1.0, &z[..1], &[1.0]).unwrap().log_value;
        let heat = heat_kernel(0.0, &y[1..], 1.0, &z[1..]).unwrap().log_value;
        assert!((k - pp - heat).abs() < 1e-14);
    }

    #[test]
    fn kernel_q_with_identity_rotation() {
        let spec = SpectralQ::diagonal(&[0.7, 2.0]).unwrap();
        let (x, x2) = ([0.5, -0.4], [1.1, 0.2]);
        assert_eq!(kernel_q(0.0, &x, 1.0, &x2, &spec), kernel_p(0.0, &x, 1.0, &x2, &spec));
    }

    #[test]
    fn mass_values() {
        let m = kernel_mass(0.0, 1.0, &[1.0]).unwrap();
        let expect = (2.0 * PI / 2.0f64.sinh()).sqrt();
        assert!((m - expect).abs() < 1e-15);
        assert!((m - 1.316207962846745).abs() < 1e-12);
        let small = kernel_mass(0.0, 1.0, &[1e-14]).unwrap();
        assert!(small > 1e3);
    }

    #[test]
    fn plan_matches_direct_kernel() {
        let spec = crate::spectral::eigendecompose_q(&dmatrix![3.0, 1.0; 1.0, 1.0], None).unwrap();
        let plan = KernelPlan::new(&spec, 0.7).unwrap();
        for (x, x2) in [([0.1, 0.2], [-0.5, 1.0]), ([2.0, -1.5], [0.3, 0.3])] {
            let a = plan.log_kernel(&x, &x2);
            let b = kernel_q(0.3, &x, 1.0, &x2, &spec).unwrap().log_value;
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let semi = SpectralQ::diagonal(&[0.0, 1.5]).unwrap();
        let plan = KernelPlan::new(&semi, 0.4).unwrap();
        let a = plan.log_kernel(&[0.3, -0.7], &[1.0, 0.2]);
        let b = kernel_q(0.0, &[0.3, -0.7], 0.4, &[1.0, 0.2], &semi).unwrap().log_value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn linear_kernel_trivial_dynamics_is_heat() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::identity(2, 2);
        let g = controllability_gramian(&a, &b, 0.8, 50).unwrap();
        assert!((g - DMatrix::<f64>::identity(2, 2) * 0.8).amax() < 1e-14);
        let (x0, x1) = ([0.3, -0.2], [1.0, 0.5]);
        let k = kernel_linear(0.2, &x0, 1.0, &x1, &a, &b, GRAMIAN_STEPS).unwrap();
        let h = heat_kernel(0.2, &x0, 1.0, &x1).unwrap();
        assert!((k.log_value - h.log_value).abs() < 1e-12);
    }

    #[test]
    fn linear_kernel_scalar_gramian_and_peak() {
        let (a, tau) = (-0.7, 1.3);
        let am = dmatrix![a];
        let g = controllability_gramian(&am, &dmatrix![1.0], tau, GRAMIAN_STEPS).unwrap()[(0, 0)];
        let exact = ((2.0 * a * tau).exp() - 1.0) / (2.0 * a);
        assert!((g - exact).abs() / exact < 1e-4);
        let center = (a * tau).exp();
        let k = |x1: f64| kernel_linear(0.0, &[1.0], tau, &[x1], &am, &dmatrix![1.0], GRAMIAN_STEPS).unwrap().log_value;
        assert!(k(center) > k(center + 1e-3));
        assert!(k(center) > k(center - 1e-3));
    }

    #[test]
    fn linear_kernel_uncontrollable() {
        let r = kernel_linear(0.0, &[0.0], 1.0, &[0.0], &dmatrix![0.5], &dmatrix![0.0], 20);
        assert!(matches!(r, Err(QsbError::SingularGramian { .. })));
    }
}
