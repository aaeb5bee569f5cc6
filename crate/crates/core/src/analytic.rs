//! Closed-form reference solutions: the action-integral distance, `φ̂` for
//! constant and standard-normal initial data, and the heat-kernel limit.
//! Everything is evaluated per eigenvalue of `Q/2` in eigen-coordinates.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;

use crate::error::{QsbError, Result};
use crate::hyperbolic::{coth, csch, ln_cosh};
use crate::kernels::{heat_kernel, kernel_p, kernel_pp};
use crate::spectral::{eigendecompose_q, SpectralQ};

/// Minimal action of `L(q, v) = ½|v|² + qᵀ(2D)q` from `y` to `z` over
/// elapsed time `tau`: `Σᵢ √dᵢ [coth(2τ√dᵢ)(yᵢ² + zᵢ²) - 2csch(2τ√dᵢ) yᵢzᵢ]`.
pub fn action_distance(y: &[f64], z: &[f64], tau: f64, d_pos: &[f64]) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(QsbError::NonPositiveTau(tau));
    }
    if y.len() != d_pos.len() || z.len() != d_pos.len() {
        return Err(QsbError::DimensionMismatch { expected: d_pos.len(), got: y.len().max(z.len()) });
    }
    let mut total = 0.0;
    for ((&a, &b), &d) in y.iter().zip(z).zip(d_pos) {
        if !(d > 0.0) {
            return Err(QsbError::NonPositiveEigenvalue(d));
        }
        let s = d.sqrt();
        let x = 2.0 * tau * s;
        total += s * (coth(x) * (a * a + b * b) - 2.0 * csch(x) * a * b);
    }
    Ok(total)
}

/// Minimum of the discretized action for one coordinate over `k` equal
/// segments: kinetic term by forward differences, potential `2dγ²` by the
/// trapezoid rule. The stationarity conditions are tridiagonal and solved
/// directly.
pub fn discrete_action(y: f64, z: f64, tau: f64, d: f64, k: usize) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(QsbError::NonPositiveTau(tau));
    }
    if k < 2 {
        return Err(QsbError::InvalidArgument(format!("need at least 2 segments, got {k}")));
    }
    let h = tau / k as f64;
    let diag = 2.0 / h + 4.0 * d * h;
    let off = -1.0 / h;
    let m = k - 1;
    let mut rhs = vec![0.0; m];
    rhs[0] -= off * y;
    rhs[m - 1] -= off * z;
    // Thomas algorithm.
    let mut c = vec![0.0; m];
    let mut g = vec![0.0; m];
    c[0] = off / diag;
    g[0] = rhs[0] / diag;
    for i in 1..m {
        let den = diag - off * c[i - 1];
        c[i] = off / den;
        g[i] = (rhs[i] - off * g[i - 1]) / den;
    }
    let mut path = vec![0.0; k + 1];
    path[0] = y;
    path[k] = z;
    path[m] = g[m - 1];
    for i in (0..m - 1).rev() {
        path[i + 1] = g[i] - c[i] * path[i + 2];
    }
    let kinetic: f64 = path.windows(2).map(|w| 0.5 * ((w[1] - w[0]) / h).powi(2) * h).sum();
    let potential: f64 = path
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let w = if i == 0 || i == k { 0.5 * h } else { h };
            w * 2.0 * d * g * g
        })
        .sum();
    Ok(kinetic + potential)
}

fn require_definite(spec: &SpectralQ) -> Result<()> {
    if let Some(&i) = spec.zero_idx().first() {
        return Err(QsbError::SingularQ(spec.d()[i]));
    }
    Ok(())
}

/// `φ̂(t, x)` for `φ̂₀ ≡ 1` and `Q ≻ 0`:
/// `exp(-¼ xᵀ√(2Q) tanh(t√(2Q)) x) / √det cosh(t√(2Q))`.
pub fn phihat_unity(t: f64, x: &[f64], q: &DMatrix<f64>) -> Result<f64> {
    let spec = eigendecompose_q(q, None)?;
    require_definite(&spec)?;
    phihat_unity_spectral(t, x, &spec)
}

/// [`phihat_unity`] for `Q ⪰ 0`: directions with `d = 0` carry the heat
/// kernel, which leaves constants invariant, and contribute a factor one.
pub fn phihat_unity_spectral(t: f64, x: &[f64], spec: &SpectralQ) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(QsbError::NonMonotoneTime { t0: 0.0, t });
    }
    if x.len() != spec.dim() {
        return Err(QsbError::DimensionMismatch { expected: spec.dim(), got: x.len() });
    }
    let y = spec.to_eigen(x);
    let mut log_value = 0.0;
    for &i in spec.positive_idx() {
        let s = spec.d()[i].sqrt();
        let arg = 2.0 * t * s;
        log_value -= 0.5 * s * arg.tanh() * y[i] * y[i] + 0.5 * ln_cosh(arg);
    }
    Ok(log_value.exp())
}

/// `φ̂(t, x)` for the standard normal initial condition `φ̂₀ = N(0, I)` and
/// `Q ≻ 0`.
pub fn phihat_gaussian(t: f64, x: &[f64], q: &DMatrix<f64>) -> Result<f64> {
    let spec = eigendecompose_q(q, None)?;
    require_definite(&spec)?;
    phihat_gaussian_spectral(t, x, &spec)
}

/// [`phihat_gaussian`] for `Q ⪰ 0`. With `a = 2t√d`, each positive
/// direction contributes
/// `d^{1/4} / √(2π(√d cosh a + sinh a)) · exp(-½y²√d(√d + coth a)/(√d coth a + 1))`
/// and each zero direction the heat-smoothed normal `N(0, 1 + 2t)`.
pub fn phihat_gaussian_spectral(t: f64, x: &[f64], spec: &SpectralQ) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(QsbError::NonMonotoneTime { t0: 0.0, t });
    }
    if x.len() != spec.dim() {
        return Err(QsbError::DimensionMismatch { expected: spec.dim(), got: x.len() });
    }
    let y = spec.to_eigen(x);
    let ln_2pi = (2.0 * PI).ln();
    if t == 0.0 {
        return Ok((-0.5 * (y.len() as f64 * ln_2pi + y.iter().map(|v| v * v).sum::<f64>())).exp());
    }
    let mut log_value = 0.0;
    for &i in spec.positive_idx() {
        let d = spec.d()[i];
        let s = d.sqrt();
        let a = 2.0 * t * s;
        let e = (-2.0 * a).exp();
        // ln(√d cosh a + sinh a) without overflow.
        let ln_den = a - LN_2 + (s * (1.0 + e) + (-(-2.0 * a).exp_m1())).ln();
        let c = coth(a);
        log_value += 0.25 * d.ln() - 0.5 * (ln_2pi + ln_den) - 0.5 * y[i] * y[i] * s * (s + c) / (s * c + 1.0);
    }
    for &i in spec.zero_idx() {
        let var = 1.0 + 2.0 * t;
        log_value -= 0.5 * ((2.0 * PI * var).ln() + y[i] * y[i] / var);
    }
    Ok(log_value.exp())
}

/// Largest relative deviation of `κ++` with `d = d_scale·1` from the heat
/// kernel over `points`, at elapsed time `tau`. `d_scale = 0` goes through
/// the semidefinite kernel with an all-zero spectrum.
pub fn heat_limit_check(d_scale: f64, points: &[(Vec<f64>, Vec<f64>)], tau: f64) -> Result<f64> {
    if !(d_scale >= 0.0) {
        return Err(QsbError::InvalidArgument(format!("d_scale must be nonnegative, got {d_scale}")));
    }
    let mut worst: f64 = 0.0;
    for (y, z) in points {
        let heat = heat_kernel(0.0, y, tau, z)?.value();
        let k = if d_scale == 0.0 {
            kernel_p(0.0, y, tau, z, &SpectralQ::diagonal(&vec![0.0; y.len()])?)?
        } else {
            kernel_pp(0.0, y, tau, z, &vec![d_scale; y.len()])?
        };
        worst = worst.max((k.value() - heat).abs() / heat);
    }
    Ok(worst)
}

/// Relative residual `|∂τκ - Δ_yκ + (Σ dᵢyᵢ²)κ| / κ` of the forward
/// reaction-diffusion equation for `κ++(0, z; τ, y)` as a function of
/// `(τ, y)`, with second-order central differences of spacing `h` in space
/// and `dt` in time.
pub fn pde_residual(d_pos: &[f64], tau: f64, y: &[f64], z: &[f64], h: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0 && h > 0.0) || dt >= tau {
        return Err(QsbError::InvalidArgument(format!("need 0 < dt < tau and h > 0, got dt={dt}, h={h}")));
    }
    let k = |t: f64, p: &[f64]| kernel_pp(0.0, z, t, p, d_pos).map(|e| e.value());
    let centre = k(tau, y)?;
    let dk_dt = (k(tau + dt, y)? - k(tau - dt, y)?) / (2.0 * dt);
    let mut lap = 0.0;
    let mut p = y.to_vec();
    for i in 0..y.len() {
        p[i] = y[i] + h;
        let up = k(tau, &p)?;
        p[i] = y[i] - h;
        let down = k(tau, &p)?;
        p[i] = y[i];
        lap += (up - 2.0 * centre + down) / (h * h);
    }
    let q: f64 = d_pos.iter().zip(y).map(|(d, v)| d * v * v).sum();
    Ok((dk_dt - lap + q * centre).abs() / centre)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn action_examples() {
        assert_eq!(action_distance(&[0.0], &[0.0], 1.0, &[2.0]).unwrap(), 0.0);
        let v = action_distance(&[1.0], &[1.0], 0.5, &[1.0]).unwrap();
        assert!((v - 2.0 * (1f64.tanh().recip() - 1f64.sinh().recip())).abs() < 1e-15);
        assert!((v - 0.92424).abs() < 1e-5);
        assert!(matches!(action_distance(&[1.0], &[1.0], 0.0, &[1.0]), Err(QsbError::NonPositiveTau(_))));
    }

    #[test]
    fn action_matches_matrix_m() {
        let (y, z, d) = ([0.3, -1.2], [1.5, 0.4], [0.7, 3.0]);
        let m = crate::spectral::build_matrix_m(&d, 0.8).unwrap();
        let a = action_distance(&y, &z, 0.8, &d).unwrap();
        assert!((a - m.quadratic_form(&y, &z)).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn discrete_action_converges() {
        let exact = action_distance(&[1.0], &[-0.5], 0.7, &[1.3]).unwrap();
        let e1 = (discrete_action(1.0, -0.5, 0.7, 1.3, 100).unwrap() - exact).abs();
        let e2 = (discrete_action(1.0, -0.5, 0.7, 1.3, 200).unwrap() - exact).abs();
        assert!(e1 / e2 > 3.5);
        assert!(e2 / exact < 1e-4);
    }

    #[test]
    fn unity_examples() {
        let q = dmatrix![2.0];
        assert_eq!(phihat_unity(0.0, &[1.7], &q).unwrap(), 1.0);
        let v = phihat_unity(1.0, &[0.5], &q).unwrap();
        let expect = (-0.25 * 0.25 * 2.0 * 2f64.tanh()).exp() / 2f64.cosh().sqrt();
        assert!((v - expect).abs() < 1e-15);
        assert!((phihat_unity(3.0, &[1.0], &dmatrix![1e-14]).err().is_some()));
        let tiny = phihat_unity(2.0, &[1.0, -1.0], &dmatrix![1e-8, 0.0; 0.0, 1e-8]).unwrap();
        assert!((tiny - 1.0).abs() < 1e-6);
        assert!(matches!(phihat_unity(1.0, &[0.0, 0.0], &dmatrix![2.0, 0.0; 0.0, 0.0]), Err(QsbError::SingularQ(_))));
    }

    #[test]
    fn gaussian_examples() {
        let q = dmatrix![2.0, 0.0; 0.0, 2.0];
        let x = [0.4, -0.9];
        let v = phihat_gaussian(0.5, &x, &q).unwrap();
        assert!((v - phihat_gaussian(0.5, &[-0.4, 0.9], &q).unwrap()).abs() < 1e-16);
        let normal = (-0.5 * (0.16 + 0.81f64)).exp() / (2.0 * PI);
        assert!((phihat_gaussian(1e-4, &x, &q).unwrap() - normal).abs() / normal < 1e-3);
        assert!(phihat_gaussian(40.0, &x, &q).unwrap().is_finite());
    }

    #[test]
    fn heat_limit_is_monotone() {
        let pts = vec![(vec![0.0, 0.0], vec![0.5, -0.5]), (vec![1.0, 2.0], vec![-1.0, 0.0])];
        let e4 = heat_limit_check(1e-4, &pts, 1.0).unwrap();
        let e8 = heat_limit_check(1e-8, &pts, 1.0).unwrap();
        assert!(e8 < 1e-4 && e4 > e8);
        assert_eq!(heat_limit_check(0.0, &pts, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn pde_residual_is_second_order() {
        let r1 = pde_residual(&[1.0], 0.6, &[0.4], &[-0.3], 0.02, 0.02).unwrap();
        let r2 = pde_residual(&[1.0], 0.6, &[0.4], &[-0.3], 0.01, 0.01).unwrap();
        assert!(r1 / r2 > 3.5, "{r1} {r2}");
    }
}
