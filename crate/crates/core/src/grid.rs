//! Tensor-product grids with trapezoid weights, dense kernel matrices on
//! node pairs, and the discrete integral operators used by the Sinkhorn
//! recursion.

use crate::error::{QsbError, Result};
use crate::exec::Exec;
use crate::kernels::KernelPlan;
use crate::spectral::SpectralQ;

pub const MIN_POINTS: usize = 16;
pub const MAX_NODES: usize = 4096;

/// Uniform 1D or 2D grid, nodes flattened row-major (last dimension fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Build a grid over `bounds` (one `(lower, upper)` per dimension).
pub fn build_grid(bounds: &[(f64, f64)], counts: &[usize]) -> Result<GridSpec> {
    let dim = bounds.len();
    if dim == 0 || dim > 2 {
        return Err(QsbError::UnsupportedDimension(dim));
    }
    if counts.len() != dim {
        return Err(QsbError::DimensionMismatch { expected: dim, got: counts.len() });
    }
    for &(lo, hi) in bounds {
        if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
            return Err(QsbError::InvalidBounds { lower: lo, upper: hi });
        }
    }
    if let Some(&c) = counts.iter().find(|&&c| c < MIN_POINTS) {
        return Err(QsbError::TooFewPoints { count: c, min: MIN_POINTS });
    }
    let total: usize = counts.iter().product();
    if total > MAX_NODES {
        return Err(QsbError::TooManyNodes { count: total, max: MAX_NODES });
    }
    GridSpec::uniform(bounds, counts)
}

impl GridSpec {
    /// Uniform grid without the dense-size limits of [`build_grid`]. Used for
    /// quadrature boxes that never back a kernel matrix.
    pub fn uniform(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        let dim = bounds.len();
        if counts.len() != dim {
            return Err(QsbError::DimensionMismatch { expected: dim, got: counts.len() });
        }
        if let Some(&c) = counts.iter().find(|&&c| c < 2) {
            return Err(QsbError::TooFewPoints { count: c, min: 2 });
        }
        let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        let spacing: Vec<f64> = (0..dim).map(|k| (upper[k] - lower[k]) / (counts[k] - 1) as f64).collect();
        let axes: Vec<Vec<(f64, f64)>> = (0..dim)
            .map(|k| {
                (0..counts[k])
                    .map(|i| {
                        // last node pinned to the upper bound
                        let x = if i + 1 == counts[k] { upper[k] } else { lower[k] + spacing[k] * i as f64 };
                        let w = if i == 0 || i + 1 == counts[k] { 0.5 * spacing[k] } else { spacing[k] };
                        (x, w)
                    })
                    .collect()
            })
            .collect();
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        if dim == 1 {
            for &(x, w) in &axes[0] {
                points.push(x);
                weights.push(w);
            }
        } else {
            for &(x0, w0) in &axes[0] {
                for &(x1, w1) in &axes[1] {
                    points.push(x0);
                    points.push(x1);
                    weights.push(w0 * w1);
                }
            }
        }
        Ok(GridSpec { lower, upper, counts: counts.to_vec(), spacing, points, weights })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    /// Coordinates along axis `k`.
    pub fn axis(&self, k: usize) -> Vec<f64> {
        (0..self.counts[k])
            .map(|i| if i + 1 == self.counts[k] { self.upper[k] } else { self.lower[k] + self.spacing[k] * i as f64 })
            .collect()
    }

    /// Flat index of the multi-index `idx`.
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    /// Quadrature `Σ wᵢ fᵢ`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Weighted L1 distance `Σ wᵢ |fᵢ - gᵢ|`.
    pub fn l1_distance(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f.iter().zip(g)).map(|(w, (a, b))| w * (a - b).abs()).sum()
    }

    /// Clamp `x` into the grid box.
    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut clamped = false;
        for (k, v) in x.iter_mut().enumerate() {
            if *v < self.lower[k] {
                *v = self.lower[k];
                clamped = true;
            } else if *v > self.upper[k] {
                *v = self.upper[k];
                clamped = true;
            }
        }
        clamped
    }

    /// Linear (1D) or bilinear (2D) interpolation of node values at `x`,
    /// with `x` clamped into the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        interp_uniform(&self.lower, &self.spacing, &self.counts, values, x)
    }
}

/// Multilinear interpolation on a uniform grid with row-major values.
pub(crate) fn interp_uniform(lower: &[f64], spacing: &[f64], counts: &[usize], values: &[f64], x: &[f64]) -> f64 {
    let locate = |k: usize| {
        let s = ((x[k] - lower[k]) / spacing[k]).clamp(0.0, (counts[k] - 1) as f64);
        let i = (s.floor() as usize).min(counts[k] - 2);
        (i, s - i as f64)
    };
    match counts.len() {
        1 => {
            let (i, f) = locate(0);
            values[i] * (1.0 - f) + values[i + 1] * f
        }
        _ => {
            let (i, fi) = locate(0);
            let (j, fj) = locate(1);
            let n1 = counts[1];
            let v = |a: usize, b: usize| values[a * n1 + b];
            (1.0 - fi) * ((1.0 - fj) * v(i, j) + fj * v(i, j + 1)) + fi * ((1.0 - fj) * v(i + 1, j) + fj * v(i + 1, j + 1))
        }
    }
}

/// Dense `N x N` kernel matrix `K[i][j] = κ(t0, node_i, t1, node_j)` in
/// original coordinates, together with the quadrature weights it is applied
/// with.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    t0: f64,
    t1: f64,
    values: Vec<f64>,
    weights: Vec<f64>,
}

/// Nodes of `grid` mapped to eigen-coordinates, flattened.
pub(crate) fn eigen_nodes(grid: &GridSpec, spec: &SpectralQ) -> Vec<f64> {
    (0..grid.len()).flat_map(|i| spec.to_eigen(grid.node(i))).collect()
}

pub fn assemble_kernel_matrix(grid: &GridSpec, t0: f64, t1: f64, spec: &SpectralQ) -> Result<KernelMatrix> {
    assemble_kernel_matrix_with(grid, t0, t1, spec, Exec::default())
}

/// [`assemble_kernel_matrix`] with an explicit execution policy. Each entry
/// is evaluated with its indices ordered `(min, max)`, so the matrix is
/// exactly symmetric regardless of policy.
pub fn assemble_kernel_matrix_with(
    grid: &GridSpec,
    t0: f64,
    t1: f64,
    spec: &SpectralQ,
    exec: Exec,
) -> Result<KernelMatrix> {
    if spec.dim() != grid.dim() {
        return Err(QsbError::DimensionMismatch { expected: grid.dim(), got: spec.dim() });
    }
    let tau = crate::error::check_times(t0, t1)?;
    let plan = KernelPlan::new(spec, tau)?;
    let n = grid.len();
    let dim = grid.dim();
    let eig = eigen_nodes(grid, spec);
    let mut values = vec![0.0; n * n];
    exec.for_each_chunk(&mut values, n, |i, row| {
        let yi = &eig[i * dim..(i + 1) * dim];
        for (j, v) in row.iter_mut().enumerate() {
            let yj = &eig[j * dim..(j + 1) * dim];
            *v = if i <= j { plan.log_eigen(yi, yj) } else { plan.log_eigen(yj, yi) }.exp();
        }
    });
    Ok(KernelMatrix { n, t0, t1, values, weights: grid.weights().to_vec() })
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Multiply every entry by `factor` (fault injection in checks).
    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n {
            return Err(QsbError::DimensionMismatch { expected: self.n, got: f.len() });
        }
        Ok(())
    }

    /// `g[i] = Σⱼ K[j][i] f[j] wⱼ`.
    pub fn forward_with(&self, f: &[f64], exec: Exec) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let n = self.n;
        let fw: Vec<f64> = f.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        let mut out = vec![0.0; n];
        // column access; chunked over output indices
        let chunk = (n / 64).max(32);
        exec.for_each_chunk(&mut out, chunk, |c, block| {
            let start = c * chunk;
            for (j, &fj) in fw.iter().enumerate() {
                let row = &self.values[j * n + start..j * n + start + block.len()];
                for (o, &k) in block.iter_mut().zip(row) {
                    *o += k * fj;
                }
            }
        });
        Ok(out)
    }

    /// `g[i] = Σⱼ K[i][j] f[j] wⱼ`.
    pub fn backward_with(&self, f: &[f64], exec: Exec) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let n = self.n;
        let fw: Vec<f64> = f.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        let mut out = vec![0.0; n];
        exec.fill(&mut out, |i| {
            let row = &self.values[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (&k, &fj) in row.iter().zip(&fw) {
                acc += k * fj;
            }
            acc
        });
        Ok(out)
    }
}

/// Discrete `∫ κ(t0, y, t, x) f(y) dy` at every node.
pub fn apply_forward(k: &KernelMatrix, f: &[f64]) -> Result<Vec<f64>> {
    k.forward_with(f, Exec::default())
}

/// Discrete `∫ κ(t, x, t1, y) f(y) dy` at every node.
pub fn apply_backward(k: &KernelMatrix, f: &[f64]) -> Result<Vec<f64>> {
    k.backward_with(f, Exec::default())
}

/// Matrix-free propagation `g[i] = Σⱼ κ(node_i, node_j) f[j] wⱼ` at elapsed
/// time `tau`, evaluating kernel entries on the fly.
pub fn propagate(grid: &GridSpec, spec: &SpectralQ, tau: f64, f: &[f64], exec: Exec) -> Result<Vec<f64>> {
    if f.len() != grid.len() {
        return Err(QsbError::DimensionMismatch { expected: grid.len(), got: f.len() });
    }
    let plan = KernelPlan::new(spec, tau)?;
    let eig = eigen_nodes(grid, spec);
    Ok(propagate_eigen(&plan, &eig, grid.dim(), grid.weights(), f, exec))
}

pub(crate) fn propagate_eigen(plan: &KernelPlan, eig: &[f64], dim: usize, weights: &[f64], f: &[f64], exec: Exec) -> Vec<f64> {
    let n = weights.len();
    let fw: Vec<f64> = f.iter().zip(weights).map(|(a, w)| a * w).collect();
    let mut out = vec![0.0; n];
    exec.fill(&mut out, |i| {
        let yi = &eig[i * dim..(i + 1) * dim];
        let mut acc = 0.0;
        for (j, &fj) in fw.iter().enumerate() {
            if fj != 0.0 {
                let yj = &eig[j * dim..(j + 1) * dim];
                let l = if i <= j { plan.log_eigen(yi, yj) } else { plan.log_eigen(yj, yi) };
                acc += l.exp() * fj;
            }
        }
        acc
    });
    out
}
