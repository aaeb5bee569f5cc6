//! Eigendecomposition of the state-cost matrix and the block matrix `M`
//! whose quadratic form sits in the exponent of the quadratic-cost kernel.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{QsbError, Result};
use crate::hyperbolic;

/// Asymmetry (relative to `max(1, |Q|_max)`) accepted and symmetrized away.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Eigendecomposition `Q/2 = Vᵀ diag(d) V` with the eigenvalues split into a
/// positive block and a (clamped) zero block.
///
/// Rows of `v` are eigenvectors, so eigen-coordinates are `y = V x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralQ {
    v: DMatrix<f64>,
    d: Vec<f64>,
    positive_idx: Vec<usize>,
    zero_idx: Vec<usize>,
    zero_tol: f64,
}

/// Decompose `Q/2`. `zero_tol = None` uses `1e-10 * max(1, max eigenvalue)`.
pub fn eigendecompose_q(q: &DMatrix<f64>, zero_tol: Option<f64>) -> Result<SpectralQ> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return Err(QsbError::DimensionMismatch { expected: n.max(1), got: q.ncols() });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(QsbError::InvalidArgument("Q has non-finite entries".into()));
    }
    let scale = q.amax().max(1.0);
    let asym = (q - q.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(QsbError::NotSymmetric { asymmetry: asym, tolerance: SYMMETRY_TOL * scale });
    }
    let half = (q + q.transpose()) * 0.25;
    let eig = SymmetricEigen::new(half);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = zero_tol.unwrap_or(1e-10 * max_eig.max(1.0));
    if !(tol >= 0.0) {
        return Err(QsbError::InvalidArgument(format!("zero_tol {tol} must be nonnegative")));
    }

    let mut v = DMatrix::zeros(n, n);
    let mut d = vec![0.0; n];
    for (row, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda < -tol {
            return Err(QsbError::NegativeEigenvalue { value: lambda, tolerance: tol });
        }
        d[row] = if lambda <= tol { 0.0 } else { lambda };
        for c in 0..n {
            v[(row, c)] = eig.eigenvectors[(c, k)];
        }
    }
    SpectralQ::from_parts(v, d, tol)
}

impl SpectralQ {
    /// Build from an explicit orthogonal `V` (rows = eigenvectors) and
    /// nonnegative eigenvalues.
    pub fn from_parts(v: DMatrix<f64>, d: Vec<f64>, zero_tol: f64) -> Result<Self> {
        let n = d.len();
        if v.nrows() != n || v.ncols() != n {
            return Err(QsbError::DimensionMismatch { expected: n, got: v.nrows() });
        }
        let orth = (&v * v.transpose() - DMatrix::<f64>::identity(n, n)).amax();
        if orth > 1e-10 {
            return Err(QsbError::InvalidArgument(format!("V is not orthogonal (residual {orth:e})")));
        }
        let mut positive_idx = Vec::new();
        let mut zero_idx = Vec::new();
        let mut d = d;
        for (i, di) in d.iter_mut().enumerate() {
            if *di < -zero_tol || !di.is_finite() {
                return Err(QsbError::NegativeEigenvalue { value: *di, tolerance: zero_tol });
            }
            if *di <= zero_tol {
                *di = 0.0;
                zero_idx.push(i);
            } else {
                positive_idx.push(i);
            }
        }
        Ok(SpectralQ { v, d, positive_idx, zero_idx, zero_tol })
    }

    /// Diagonal cost `Q/2 = diag(d)` with `V = I`.
    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        Self::from_parts(DMatrix::identity(n, n), d.to_vec(), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn positive_idx(&self) -> &[usize] {
        &self.positive_idx
    }

    pub fn zero_idx(&self) -> &[usize] {
        &self.zero_idx
    }

    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    /// Eigenvalues on `positive_idx`, in order.
    pub fn positive_d(&self) -> Vec<f64> {
        self.positive_idx.iter().map(|&i| self.d[i]).collect()
    }

    /// `y = V x`.
    pub fn to_eigen(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|r| (0..n).map(|c| self.v[(r, c)] * x[c]).sum()).collect()
    }

    /// `x = Vᵀ y`.
    pub fn from_eigen(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|c| (0..n).map(|r| self.v[(r, c)] * y[r]).sum()).collect()
    }

    /// `Vᵀ diag(d) V`, which reproduces `Q/2`.
    pub fn reconstruct_half_q(&self) -> DMatrix<f64> {
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.d));
        self.v.transpose() * dm * &self.v
    }

    /// `g(Q/2) = Vᵀ g(D) V` for a scalar function applied eigenvalue-wise.
    pub fn matrix_function<F: Fn(f64) -> f64>(&self, g: F) -> DMatrix<f64> {
        let gd: Vec<f64> = self.d.iter().map(|&x| g(x)).collect();
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(gd));
        self.v.transpose() * dm * &self.v
    }
}

/// The `2m x 2m` matrix
/// `[[√D coth(2τ√D), -√D csch(2τ√D)], [-√D csch(2τ√D), √D coth(2τ√D)]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixM {
    tau: f64,
    d: Vec<f64>,
    coth: Vec<f64>,
    csch: Vec<f64>,
    tanh_half: Vec<f64>,
    blocks: DMatrix<f64>,
}

pub fn build_matrix_m(d_pos: &[f64], tau: f64) -> Result<MatrixM> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(QsbError::NonPositiveTau(tau));
    }
    if let Some(&bad) = d_pos.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
        return Err(QsbError::NonPositiveEigenvalue(bad));
    }
    let m = d_pos.len();
    let mut coth = Vec::with_capacity(m);
    let mut csch = Vec::with_capacity(m);
    let mut tanh_half = Vec::with_capacity(m);
    let mut blocks = DMatrix::zeros(2 * m, 2 * m);
    for (i, &d) in d_pos.iter().enumerate() {
        let s = d.sqrt();
        let arg = 2.0 * tau * s;
        let (ct, cs) = (hyperbolic::coth(arg), hyperbolic::csch(arg));
        coth.push(ct);
        csch.push(cs);
        tanh_half.push(hyperbolic::tanh_half(arg));
        blocks[(i, i)] = s * ct;
        blocks[(m + i, m + i)] = s * ct;
        blocks[(i, m + i)] = -s * cs;
        blocks[(m + i, i)] = -s * cs;
    }
    Ok(MatrixM { tau, d: d_pos.to_vec(), coth, csch, tanh_half, blocks })
}

impl MatrixM {
    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn coth(&self) -> &[f64] {
        &self.coth
    }

    pub fn csch(&self) -> &[f64] {
        &self.csch
    }

    pub fn blocks(&self) -> &DMatrix<f64> {
        &self.blocks
    }

    /// Mutable access to the assembled blocks, for fault-injection checks.
    pub fn blocks_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.blocks
    }

    /// `(y, z)ᵀ M (y, z)` from the assembled blocks.
    pub fn quadratic_form(&self, y: &[f64], z: &[f64]) -> f64 {
        let m = self.m();
        let w: Vec<f64> = y.iter().chain(z.iter()).cloned().collect();
        let mut acc = 0.0;
        for r in 0..2 * m {
            for c in 0..2 * m {
                acc += w[r] * self.blocks[(r, c)] * w[c];
            }
        }
        acc
    }

    /// Eigenvalues from the 2x2 block structure: each dimension contributes
    /// `√d tanh(τ√d)` and `√d (coth + csch)(2τ√d)`. Sorted ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .d
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| {
                let s = d.sqrt();
                [s * self.tanh_half[i], s * (self.coth[i] + self.csch[i])]
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::INFINITY)
    }

    /// Determinant as the product of the block eigenvalues.
    pub fn det(&self) -> f64 {
        self.eigenvalues().iter().product()
    }

    /// Eigenvalues of the assembled dense blocks by a general symmetric solver.
    pub fn dense_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.blocks.clone()).eigenvalues.iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Outcome of [`symplectic_factor_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymplecticCheck {
    pub holds: bool,
    pub residual: f64,
}

/// Threshold on the scaled residual below which the symplectic identity holds.
pub const SYMPLECTIC_TOL: f64 = 1e-8;

/// Recover `S = M⁽¹⁾M⁽²⁾ = D^{-1/4} M D^{-1/4}` from the assembled blocks and
/// measure `|SᵀJS - J|_max`, scaled by `max(1, |S|_max²)` so round-off in
/// entries of size `coth(2τ√d)` does not masquerade as a violation.
pub fn symplectic_factor_check(m: &MatrixM) -> SymplecticCheck {
    let k = m.m();
    let quarter: Vec<f64> = m.d.iter().map(|d| d.powf(-0.25)).collect();
    let mut s = DMatrix::zeros(2 * k, 2 * k);
    for r in 0..2 * k {
        for c in 0..2 * k {
            s[(r, c)] = quarter[r % k] * m.blocks[(r, c)] * quarter[c % k];
        }
    }
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        j[(i, k + i)] = 1.0;
        j[(k + i, i)] = -1.0;
    }
    let raw = (s.transpose() * &j * &s - &j).amax();
    let residual = raw / s.amax().powi(2).max(1.0);
    SymplecticCheck { holds: residual < SYMPLECTIC_TOL, residual }
}
