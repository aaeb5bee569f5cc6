//! Physicist's Hermite polynomials and the truncated Hermite-series form of
//! the quadratic-cost kernel, used as an independent oracle for the closed
//! form.

use crate::error::{check_times, QsbError, Result};

/// Largest degree accepted by [`hermite_eval`].
pub const MAX_DEGREE: usize = 500;

/// `H_n(x)` by the upward three-term recurrence from `H_0 = 1`, `H_1 = 2x`.
pub fn hermite_eval(n: usize, x: f64) -> Result<f64> {
    if n > MAX_DEGREE {
        return Err(QsbError::DegreeTooLarge { degree: n, max: MAX_DEGREE });
    }
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if n == 0 {
        return Ok(prev);
    }
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `|∫ H_m H_n e^{-x²} dx - target|` by the trapezoid rule on `[-12, 12]`,
/// where the target is `√π 2ⁿ n!` on the diagonal and zero off it.
pub fn orthogonality_residual(m: usize, n: usize, quad_points: usize) -> f64 {
    let quad_points = quad_points.max(2);
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / (quad_points - 1) as f64;
    let mut acc = 0.0;
    for i in 0..quad_points {
        let x = a + h * i as f64;
        let w = if i == 0 || i == quad_points - 1 { 0.5 * h } else { h };
        let hm = hermite_eval(m, x).unwrap_or(f64::NAN);
        let hn = hermite_eval(n, x).unwrap_or(f64::NAN);
        acc += w * hm * hn * (-x * x).exp();
    }
    let target = if m == n {
        std::f64::consts::PI.sqrt() * (0..n).fold(1.0, |p, k| p * 2.0 * (k + 1) as f64)
    } else {
        0.0
    };
    (acc - target).abs()
}

/// Exact norm `√π 2ⁿ n!` of `H_n` under the weight `e^{-x²}`.
pub fn hermite_norm_sq(n: usize) -> f64 {
    std::f64::consts::PI.sqrt() * (0..n).fold(1.0, |p, k| p * 2.0 * (k + 1) as f64)
}

/// Truncated Hermite series for the kernel with positive diagonal `d`:
///
/// `∏ᵢ (dᵢ^{1/4}/√π) e^{-(yᵢ²+zᵢ²)√dᵢ/2 - τ√dᵢ} Σ_{k<terms} e^{-2kτ√dᵢ} H_k(aᵢ)H_k(bᵢ) / (2ᵏ k!)`
///
/// with `aᵢ = dᵢ^{1/4} yᵢ`, `bᵢ = dᵢ^{1/4} zᵢ`. The ratio `H_k / √(2ᵏ k!)`
/// is carried by its own normalized recurrence so high degrees do not
/// overflow.
pub fn kernel_series_oracle(t0: f64, t: f64, y: &[f64], z: &[f64], d_pos: &[f64], terms: usize) -> Result<f64> {
    let tau = check_times(t0, t)?;
    if terms == 0 {
        return Err(QsbError::InvalidArgument("series needs at least one term".into()));
    }
    if y.len() != d_pos.len() || z.len() != d_pos.len() {
        return Err(QsbError::DimensionMismatch { expected: d_pos.len(), got: y.len().min(z.len()) });
    }
    let mut value = 1.0;
    for ((&yi, &zi), &d) in y.iter().zip(z).zip(d_pos) {
        if !(d > 0.0) {
            return Err(QsbError::NonPositiveEigenvalue(d));
        }
        let s = d.sqrt();
        let q = d.powf(0.25);
        let (a, b) = (q * yi, q * zi);
        let decay = (-2.0 * tau * s).exp();
        // normalized: h_k = H_k / sqrt(2^k k!)
        let (mut ha_prev, mut ha) = (1.0, std::f64::consts::SQRT_2 * a);
        let (mut hb_prev, mut hb) = (1.0, std::f64::consts::SQRT_2 * b);
        let mut sum = 1.0;
        let mut weight = 1.0;
        for k in 1..terms {
            weight *= decay;
            sum += weight * ha * hb;
            let kf = k as f64;
            let c1 = (2.0 / (kf + 1.0)).sqrt();
            let c2 = (kf / (kf + 1.0)).sqrt();
            let na = c1 * a * ha - c2 * ha_prev;
            let nb = c1 * b * hb - c2 * hb_prev;
            ha_prev = ha;
            ha = na;
            hb_prev = hb;
            hb = nb;
        }
        let pre = q / std::f64::consts::PI.sqrt() * (-(yi * yi + zi * zi) * s / 2.0 - tau * s).exp();
        value *= pre * sum;
    }
    Ok(value)
}

/// Number of series terms for the oracle at elapsed time `tau` and smallest
/// eigenvalue `d_min`: `max(60, ⌈20/(τ√d_min)⌉)`, or `None` past the cap of 400.
pub fn default_series_terms(tau: f64, d_min: f64) -> Option<usize> {
    let want = (20.0 / (tau * d_min.sqrt())).ceil();
    if !want.is_finite() || want > 400.0 {
        return None;
    }
    Some((want as usize).max(60))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_degrees() {
        assert_eq!(hermite_eval(0, 7.3).unwrap(), 1.0);
        assert_eq!(hermite_eval(1, 0.5).unwrap(), 1.0);
        assert_eq!(hermite_eval(2, 1.0).unwrap(), 2.0);
        assert!(matches!(hermite_eval(501, 0.0), Err(QsbError::DegreeTooLarge { .. })));
    }

    #[test]
    fn recurrence_matches_explicit_forms() {
        for i in 0..=60 {
            let x = -3.0 + 0.1 * i as f64;
            let h2 = 4.0 * x * x - 2.0;
            let h3 = 8.0 * x * x * x - 12.0 * x;
            assert!((hermite_eval(2, x).unwrap() - h2).abs() <= 4.0 * f64::EPSILON * h2.abs().max(1.0));
            assert!((hermite_eval(3, x).unwrap() - h3).abs() <= 16.0 * f64::EPSILON * h3.abs().max(1.0));
        }
    }

    #[test]
    fn finite_over_representable_range() {
        // (2x)^n stays below f64::MAX for n <= 150 at |x| = 30.
        for n in [0, 10, 50, 100, 150] {
            for x in [-30.0, -1.0, 0.0, 2.5, 30.0] {
                assert!(hermite_eval(n, x).unwrap().is_finite(), "H_{n}({x})");
            }
        }
        for x in [-10.0, -5.0, 0.0, 5.0, 10.0] {
            assert!(hermite_eval(200, x).unwrap().is_finite(), "H_200({x})");
        }
    }

    #[test]
    fn orthogonality() {
        assert!(orthogonality_residual(0, 0, 1000) < 1e-10);
        assert!(orthogonality_residual(3, 5, 1000) < 1e-10);
        assert!(orthogonality_residual(7, 7, 2000) / hermite_norm_sq(7) < 1e-8);
    }

    #[test]
    fn series_tail_shrinks_with_terms() {
        let k = |n| kernel_series_oracle(0.0, 0.05, &[0.3], &[0.2], &[1.0], n).unwrap();
        let full = k(400);
        assert!((k(2) - full).abs() < (k(1) - full).abs());
    }

    #[test]
    fn term_rule() {
        assert_eq!(default_series_terms(1.0, 1.0), Some(60));
        assert_eq!(default_series_terms(0.1, 1.0), Some(200));
        assert_eq!(default_series_terms(0.01, 1.0), None);
    }
}
