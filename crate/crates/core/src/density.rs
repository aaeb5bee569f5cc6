//! Endpoint densities: Gaussians, Gaussian mixtures and tabulated values,
//! with discretization onto a working grid, marginal CDFs and exact
//! sampling.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{QsbError, Result};
use crate::grid::{interp_uniform, GridSpec};

/// Values below this floor are raised to it before any Hadamard division.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// A multivariate normal component.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(QsbError::DimensionMismatch { expected: n, got: cov.nrows() });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| QsbError::InvalidDensity("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = l.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let inv = chol.inverse();
        let log_norm = -0.5 * (n as f64 * (2.0 * PI).ln() + log_det);
        Ok(Gaussian { mean, cov, chol: l, inv, log_norm })
    }

    /// Isotropic-free scalar helper: `N(mean, std²)` in 1D.
    pub fn scalar(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![mean], DMatrix::from_element(1, 1, std * std))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let r = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, m)| a - m));
        self.log_norm - 0.5 * r.dot(&(&self.inv * &r))
    }

    fn marginal_cdf(&self, k: usize, x: f64) -> f64 {
        let s = self.cov[(k, k)].sqrt();
        0.5 * erfc(-(x - self.mean[k]) / (s * std::f64::consts::SQRT_2))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = self.mean.clone();
        for (r, o) in out.iter_mut().enumerate() {
            for (c, zc) in z.iter().enumerate().take(r + 1) {
                *o += self.chol[(r, c)] * zc;
            }
        }
        out
    }
}

/// Density values tabulated on their own uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedDensity {
    /// Row-major `values` on the uniform grid over `bounds` with `counts`
    /// points per dimension. Negative values are clamped to zero.
    pub fn new(bounds: &[(f64, f64)], counts: &[usize], values: Vec<f64>) -> Result<Self> {
        let dim = bounds.len();
        if dim == 0 || dim > 2 || counts.len() != dim {
            return Err(QsbError::UnsupportedDimension(dim));
        }
        for &(lo, hi) in bounds {
            if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                return Err(QsbError::InvalidBounds { lower: lo, upper: hi });
            }
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(QsbError::TooFewPoints { count: counts.iter().cloned().min().unwrap_or(0), min: 2 });
        }
        let total: usize = counts.iter().product();
        if values.len() != total {
            return Err(QsbError::DimensionMismatch { expected: total, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QsbError::InvalidDensity("tabulated values must be finite".into()));
        }
        let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        if values.iter().all(|&v| v == 0.0) {
            return Err(QsbError::InvalidDensity("tabulated density is identically zero".into()));
        }
        let spacing = (0..dim).map(|k| (bounds[k].1 - bounds[k].0) / (counts[k] - 1) as f64).collect();
        Ok(TabulatedDensity {
            lower: bounds.iter().map(|b| b.0).collect(),
            upper: bounds.iter().map(|b| b.1).collect(),
            counts: counts.to_vec(),
            spacing,
            values,
        })
    }

    /// Tabulate `f` on the uniform grid.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(bounds: &[(f64, f64)], counts: &[usize], f: F) -> Result<Self> {
        let g = GridSpec::uniform(bounds, counts)?;
        let values = (0..g.len()).map(|i| f(g.node(i))).collect();
        Self::new(bounds, counts, values)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lower.iter().cloned().zip(self.upper.iter().cloned()).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn own_grid(&self) -> GridSpec {
        GridSpec::uniform(&self.bounds(), &self.counts).expect("validated at construction")
    }

    /// Interpolated (unnormalized) value; zero outside the table.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let inside = x.iter().enumerate().all(|(k, &v)| v >= self.lower[k] && v <= self.upper[k]);
        if !inside {
            return 0.0;
        }
        interp_uniform(&self.lower, &self.spacing, &self.counts, &self.values, x)
    }

    fn total_mass(&self) -> f64 {
        self.own_grid().integrate(&self.values)
    }

    /// Per-axis marginal of the normalized table on its own nodes.
    fn marginal(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let g = self.own_grid();
        let axis = g.axis(k);
        let mass = self.total_mass();
        if self.counts.len() == 1 {
            return (axis, self.values.iter().map(|v| v / mass).collect());
        }
        let other = 1 - k;
        let h = self.spacing[other];
        let n_other = self.counts[other];
        let vals = (0..self.counts[k])
            .map(|i| {
                (0..n_other)
                    .map(|j| {
                        let idx = if k == 0 { [i, j] } else { [j, i] };
                        let w = if j == 0 || j + 1 == n_other { 0.5 * h } else { h };
                        w * self.values[g.flat(&idx)]
                    })
                    .sum::<f64>()
                    / mass
            })
            .collect();
        (axis, vals)
    }
}

/// Cumulative trapezoid of a piecewise-linear density on `xs`, normalized to 1.
fn cumulative(xs: &[f64], ps: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        c[i] = c[i - 1] + 0.5 * (ps[i] + ps[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = *c.last().unwrap_or(&1.0);
    if total > 0.0 {
        c.iter_mut().for_each(|v| *v /= total);
    }
    c
}

/// Invert a piecewise-linear CDF.
fn inverse_cdf(xs: &[f64], cdf: &[f64], u: f64) -> f64 {
    let k = cdf.partition_point(|&c| c < u).clamp(1, xs.len() - 1);
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
    xs[k - 1] + f.clamp(0.0, 1.0) * (xs[k] - xs[k - 1])
}

fn cdf_at(xs: &[f64], cdf: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return 0.0;
    }
    if x >= xs[xs.len() - 1] {
        return 1.0;
    }
    let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let f = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    cdf[k - 1] + f * (cdf[k] - cdf[k - 1])
}

/// An endpoint density.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    Gaussian(Gaussian),
    GaussianMixture { weights: Vec<f64>, components: Vec<Gaussian> },
    Tabulated(TabulatedDensity),
}

/// A density discretized on a working grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    /// Node values, nonnegative, with `Σ wᵢ vᵢ = 1`.
    pub values: Vec<f64>,
    /// Quadrature mass before renormalization.
    pub raw_mass: f64,
}

impl DensitySpec {
    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(DensitySpec::Gaussian(Gaussian::new(mean, cov)?))
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(QsbError::InvalidDensity("mixture needs one weight per component".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(QsbError::InvalidDensity("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(QsbError::InvalidDensity("mixture weights sum to zero".into()));
        }
        let dim = components[0].mean.len();
        if components.iter().any(|c| c.mean.len() != dim) {
            return Err(QsbError::InvalidDensity("mixture components differ in dimension".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(DensitySpec::GaussianMixture { weights, components })
    }

    pub fn dim(&self) -> usize {
        match self {
            DensitySpec::Gaussian(g) => g.mean.len(),
            DensitySpec::GaussianMixture { components, .. } => components[0].mean.len(),
            DensitySpec::Tabulated(t) => t.counts.len(),
        }
    }

    /// Density at `x`. Tabulated densities are normalized by their own
    /// trapezoid mass.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            DensitySpec::Gaussian(g) => g.ln_pdf(x).exp(),
            DensitySpec::GaussianMixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| w * c.ln_pdf(x).exp()).sum()
            }
            DensitySpec::Tabulated(t) => t.value_at(x) / t.total_mass(),
        }
    }

    /// Evaluate on `grid`, clamp at zero and renormalize so the weighted sum
    /// is one.
    pub fn discretize(&self, grid: &GridSpec) -> Result<Discretized> {
        if grid.dim() != self.dim() {
            return Err(QsbError::DimensionMismatch { expected: grid.dim(), got: self.dim() });
        }
        let raw: Vec<f64> = match self {
            DensitySpec::Tabulated(t) => (0..grid.len()).map(|i| t.value_at(grid.node(i))).collect(),
            _ => (0..grid.len()).map(|i| self.pdf(grid.node(i))).collect(),
        };
        let raw: Vec<f64> = raw.into_iter().map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 }).collect();
        let mass = grid.integrate(&raw);
        if !(mass > 0.0) {
            return Err(QsbError::NonPositiveDensity("density has no mass on the grid".into()));
        }
        let raw_mass = match self {
            DensitySpec::Tabulated(t) => mass / t.total_mass(),
            _ => mass,
        };
        Ok(Discretized { values: raw.iter().map(|v| v / mass).collect(), raw_mass })
    }

    /// Mean vector.
    pub fn mean(&self) -> Vec<f64> {
        self.moments().0
    }

    /// Covariance matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.moments().1
    }

    fn moments(&self) -> (Vec<f64>, DMatrix<f64>) {
        match self {
            DensitySpec::Gaussian(g) => (g.mean.clone(), g.cov.clone()),
            DensitySpec::GaussianMixture { weights, components } => {
                let n = self.dim();
                let mut mean = vec![0.0; n];
                for (w, c) in weights.iter().zip(components) {
                    for (m, v) in mean.iter_mut().zip(&c.mean) {
                        *m += w * v;
                    }
                }
                let mut cov = DMatrix::zeros(n, n);
                for (w, c) in weights.iter().zip(components) {
                    for r in 0..n {
                        for s in 0..n {
                            cov[(r, s)] += w * (c.cov[(r, s)] + (c.mean[r] - mean[r]) * (c.mean[s] - mean[s]));
                        }
                    }
                }
                (mean, cov)
            }
            DensitySpec::Tabulated(t) => {
                let g = t.own_grid();
                let n = self.dim();
                let mass = t.total_mass();
                let mut mean = vec![0.0; n];
                for i in 0..g.len() {
                    let p = g.weights()[i] * t.values[i] / mass;
                    for (m, v) in mean.iter_mut().zip(g.node(i)) {
                        *m += p * v;
                    }
                }
                let mut cov = DMatrix::zeros(n, n);
                for i in 0..g.len() {
                    let p = g.weights()[i] * t.values[i] / mass;
                    let x = g.node(i);
                    for r in 0..n {
                        for s in 0..n {
                            cov[(r, s)] += p * (x[r] - mean[r]) * (x[s] - mean[s]);
                        }
                    }
                }
                (mean, cov)
            }
        }
    }

    /// CDF of the `k`-th marginal.
    pub fn marginal_cdf(&self, k: usize, x: f64) -> f64 {
        match self {
            DensitySpec::Gaussian(g) => g.marginal_cdf(k, x),
            DensitySpec::GaussianMixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| w * c.marginal_cdf(k, x)).sum()
            }
            DensitySpec::Tabulated(t) => {
                let (xs, ps) = t.marginal(k);
                cdf_at(&xs, &cumulative(&xs, &ps), x)
            }
        }
    }

    /// A reusable sampler. Gaussians and mixtures are drawn exactly;
    /// tabulated densities by piecewise-linear inverse CDF (marginal of the
    /// first axis, then the interpolated conditional of the second).
    pub fn sampler(&self) -> Sampler<'_> {
        let tab = match self {
            DensitySpec::Tabulated(t) => {
                let (xs, ps) = t.marginal(0);
                let cdf0 = cumulative(&xs, &ps);
                let ys = if t.counts.len() == 2 { t.own_grid().axis(1) } else { Vec::new() };
                Some(TabSampler { xs, cdf0, ys })
            }
            _ => None,
        };
        Sampler { density: self, tab }
    }
}

struct TabSampler {
    xs: Vec<f64>,
    cdf0: Vec<f64>,
    ys: Vec<f64>,
}

/// Draws i.i.d. samples from a [`DensitySpec`].
pub struct Sampler<'a> {
    density: &'a DensitySpec,
    tab: Option<TabSampler>,
}

impl Sampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.density {
            DensitySpec::Gaussian(g) => g.sample(rng),
            DensitySpec::GaussianMixture { weights, components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                components[pick].sample(rng)
            }
            DensitySpec::Tabulated(t) => {
                let tab = self.tab.as_ref().expect("tabulated sampler");
                let x0 = inverse_cdf(&tab.xs, &tab.cdf0, rng.random());
                if t.counts.len() == 1 {
                    return vec![x0];
                }
                let cond: Vec<f64> = tab.ys.iter().map(|&y| t.value_at(&[x0, y])).collect();
                let c = cumulative(&tab.ys, &cond);
                vec![x0, inverse_cdf(&tab.ys, &c, rng.random())]
            }
        }
    }
}

/// Scaled Himmelblau function on `[0, 1]²`:
/// `((10x-5)² + 10y - 16)² + (10x - 12 + (10y-5)²)²`.
pub fn scaled_himmelblau(x: f64, y: f64) -> f64 {
    let (a, b) = (10.0 * x - 5.0, 10.0 * y - 5.0);
    (a * a + 10.0 * y - 16.0).powi(2) + (10.0 * x - 12.0 + b * b).powi(2)
}

/// Gibbs density `∝ exp(-f/35)` of the scaled Himmelblau function, tabulated
/// on `[0, 1]²`.
pub fn himmelblau_gibbs(counts: usize) -> Result<TabulatedDensity> {
    TabulatedDensity::from_fn(&[(0.0, 1.0), (0.0, 1.0)], &[counts, counts], |x| (-scaled_himmelblau(x[0], x[1]) / 35.0).exp())
}

/// Warnings for a working grid that truncates `density`: bounds closer than
/// six standard deviations to the mean, or boundary values above `1e-12`.
pub fn domain_warnings(density: &DensitySpec, grid: &GridSpec, label: &str) -> Vec<String> {
    let mut out = Vec::new();
    if !matches!(density, DensitySpec::Tabulated(_)) {
        let (mean, cov) = density.moments();
        for k in 0..grid.dim() {
            let s = cov[(k, k)].sqrt();
            if mean[k] - 6.0 * s < grid.lower()[k] || mean[k] + 6.0 * s > grid.upper()[k] {
                out.push(format!("{label}: grid axis {k} does not contain mean ± 6σ"));
            }
        }
    }
    if let Ok(d) = density.discretize(grid) {
        let edge_max = (0..grid.len())
            .filter(|&i| {
                let x = grid.node(i);
                (0..grid.dim()).any(|k| x[k] == grid.lower()[k] || x[k] == grid.upper()[k])
            })
            .map(|i| d.values[i])
            .fold(0.0, f64::max);
        if edge_max > 1e-12 {
            out.push(format!("{label}: density reaches {edge_max:.3e} on the grid boundary"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bimodal() -> DensitySpec {
        DensitySpec::mixture(vec![0.5, 0.5], vec![Gaussian::scalar(-1.0, 0.05).unwrap(), Gaussian::scalar(1.0, 0.05).unwrap()]).unwrap()
    }

    #[test]
    fn discretized_mass_is_one() {
        let g = crate::grid::build_grid(&[(-2.5, 2.5)], &[801]).unwrap();
        let d = bimodal().discretize(&g).unwrap();
        assert!((g.integrate(&d.values) - 1.0).abs() < 1e-14);
        assert!((d.raw_mass - 1.0).abs() < 1e-10);
        assert!(d.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mixture_moments() {
        let d = bimodal();
        assert!(d.mean()[0].abs() < 1e-15);
        assert!((d.covariance()[(0, 0)] - (1.0 + 0.0025)).abs() < 1e-14);
        assert!((d.marginal_cdf(0, 0.0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tabulated_interpolates_and_normalizes() {
        let t = TabulatedDensity::new(&[(0.0, 1.0)], &[3], vec![0.0, 2.0, 0.0]).unwrap();
        assert!((t.value_at(&[0.25]) - 1.0).abs() < 1e-15);
        let d = DensitySpec::Tabulated(t);
        assert!((d.pdf(&[0.5]) - 2.0).abs() < 1e-15);
        let g = crate::grid::build_grid(&[(-0.5, 1.5)], &[41]).unwrap();
        let disc = d.discretize(&g).unwrap();
        assert!((g.integrate(&disc.values) - 1.0).abs() < 1e-14);
        assert!(TabulatedDensity::new(&[(0.0, 1.0)], &[3], vec![0.0; 3]).is_err());
    }

    #[test]
    fn tabulated_sampler_matches_cdf() {
        let t = TabulatedDensity::from_fn(&[(-4.0, 4.0)], &[401], |x| (-0.5 * x[0] * x[0]).exp()).unwrap();
        let d = DensitySpec::Tabulated(t);
        let s = d.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20000;
        let below = (0..n).filter(|_| s.sample(&mut rng)[0] < 1.0).count() as f64 / n as f64;
        let expect = d.marginal_cdf(0, 1.0);
        assert!((expect - 0.8413).abs() < 2e-3);
        assert!((below - expect).abs() < 0.015);
    }

    #[test]
    fn himmelblau_table_is_2d_and_positive() {
        let t = himmelblau_gibbs(33).unwrap();
        assert_eq!(t.counts(), &[33, 33]);
        let d = DensitySpec::Tabulated(t);
        let s = d.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = s.sample(&mut rng);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn gaussian_sampling_moments() {
        let d = DensitySpec::gaussian(vec![1.0, -2.0], nalgebra::dmatrix![1.0, 0.5; 0.5, 2.0]).unwrap();
        let s = d.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| s.sample(&mut rng)).collect();
        let m1 = xs.iter().map(|x| x[1]).sum::<f64>() / n as f64;
        let c01 = xs.iter().map(|x| (x[0] - 1.0) * (x[1] + 2.0)).sum::<f64>() / n as f64;
        assert!((m1 + 2.0).abs() < 0.03);
        assert!((c01 - 0.5).abs() < 0.04);
    }
}
