//! `qsb verify`: the property suite at configurable sizes.
//!
//! Checks that go through an assembled kernel matrix take it from a single
//! constructor, which applies the optional fault factor. Closed-form checks
//! never see the fault.

use std::time::Instant;

use nalgebra::{dmatrix, DMatrix};
use qsb_core::analytic::{action_distance, discrete_action, heat_limit_check, phihat_gaussian_spectral, phihat_unity_spectral};
use qsb_core::density::Gaussian;
use qsb_core::grid::assemble_kernel_matrix_with;
use qsb_core::hermite::{hermite_norm_sq, kernel_series_oracle, orthogonality_residual};
use qsb_core::kernels::{kernel_mass, kernel_p, kernel_pp, mehler_kernel};
use qsb_core::spectral::{build_matrix_m, symplectic_factor_check};
use qsb_core::{eigendecompose_q, sinkhorn_solve, DensitySpec, Exec, GridSpec, KernelMatrix, SinkhornOptions, SpectralQ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LoadedConfig, Problem, VerifyConfig};
use crate::error::CliError;

struct Suite<'a> {
    cfg: &'a VerifyConfig,
    exec: Exec,
    fault: Option<f64>,
}

type Outcome = Result<(bool, String), CliError>;
type Runner<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn trapezoid(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| (lo + i as f64 * h, if i == 0 || i == n - 1 { 0.5 * h } else { h })).collect()
}

impl Suite<'_> {
    fn rng(&self, salt: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        r.set_stream(salt);
        r
    }

    fn kernel_matrix(&self, grid: &GridSpec, t0: f64, t1: f64, spec: &SpectralQ) -> Result<KernelMatrix, CliError> {
        let mut k = assemble_kernel_matrix_with(grid, t0, t1, spec, self.exec)?;
        if let Some(f) = self.fault {
            k.scale(1.0 + f);
        }
        Ok(k)
    }

    fn hermite_orthogonality(&self) -> Outcome {
        let mut worst: f64 = 0.0;
        for m in 0..8 {
            for n in 0..8 {
                let norm = (hermite_norm_sq(m) * hermite_norm_sq(n)).sqrt();
                worst = worst.max(orthogonality_residual(m, n, 2000) / norm);
            }
        }
        Ok((worst < 1e-10, format!("max relative residual for degrees < 8: {worst:.2e}")))
    }

    fn series(&self) -> Outcome {
        let mut rng = self.rng(1);
        let mut worst: f64 = 0.0;
        for _ in 0..self.cfg.samples {
            let (y, z) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            for d in [0.25, 1.0, 4.0] {
                for tau in [0.5, 1.0] {
                    let closed = kernel_pp(0.0, &[y], tau, &[z], &[d])?.value();
                    let series = kernel_series_oracle(0.0, tau, &[y], &[z], &[d], self.cfg.series_terms)?;
                    worst = worst.max((closed - series).abs());
                }
            }
        }
        Ok((worst < 1e-8, format!("max |closed - series({} terms)| = {worst:.2e}", self.cfg.series_terms)))
    }

    fn heat_limit(&self) -> Outcome {
        let mut rng = self.rng(2);
        let pts: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
            .map(|_| {
                let mut p = || vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                (p(), p())
            })
            .collect();
        let e = [1e-4, 1e-6, 1e-8].iter().map(|&d| heat_limit_check(d, &pts, 1.0)).collect::<Result<Vec<_>, _>>()?;
        Ok((e[2] < 1e-4 && e[0] > e[1] && e[1] > e[2], format!("rel err {:.1e} → {:.1e} → {:.1e}", e[0], e[1], e[2])))
    }

    fn mehler(&self) -> Outcome {
        let mut rng = self.rng(3);
        let mut worst: f64 = 0.0;
        for _ in 0..self.cfg.samples.max(1) * 2 {
            let n = rng.random_range(1..=3);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let tau = rng.random_range(0.05..3.0);
            worst = worst.max(rel(kernel_pp(0.0, &y, tau, &z, &vec![1.0; n])?.value(), mehler_kernel(0.0, &y, tau, &z)?.value()));
        }
        Ok((worst < 1e-12, format!("max rel diff {worst:.2e}")))
    }

    fn matrix_m(&self) -> Outcome {
        let mut rng = self.rng(4);
        let (mut min_eig, mut det_err, mut sym) = (f64::INFINITY, 0.0f64, 0.0f64);
        for _ in 0..self.cfg.sweep {
            let m = rng.random_range(1..=4);
            let d: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
            let tau = 10f64.powf(rng.random_range(-2.0..1.0));
            let mm = build_matrix_m(&d, tau)?;
            min_eig = min_eig.min(mm.min_eigenvalue());
            det_err = det_err.max(rel(mm.det(), d.iter().product()));
            sym = sym.max(symplectic_factor_check(&mm).residual);
        }
        let pass = min_eig > 0.0 && det_err < 1e-8 && sym < 1e-8;
        Ok((pass, format!("min eig {min_eig:.1e}, det err {det_err:.1e}, symplectic {sym:.1e}")))
    }

    fn mass(&self) -> Outcome {
        let nodes = trapezoid(-12.0, 12.0, self.cfg.mass_nodes.max(2));
        let mut total = 0.0;
        for &(y, wy) in &nodes {
            for &(z, wz) in &nodes {
                total += wy * wz * kernel_pp(0.0, &[y], 1.0, &[z], &[1.0])?.value();
            }
        }
        let mass = kernel_mass(0.0, 1.0, &[1.0])?;
        let err = rel(total, mass);
        Ok((err < 1e-6, format!("quadrature vs closed form: rel err {err:.2e}")))
    }

    fn pde_order(&self) -> Outcome {
        let level = |h: f64| -> Result<f64, CliError> {
            let mut worst: f64 = 0.0;
            for &(d, tau, y, z) in &[(1.0, 0.6, 0.4, -0.3), (0.25, 1.0, -1.1, 0.7), (4.0, 0.5, 0.2, 0.5)] {
                let k = |t: f64, p: f64| kernel_pp(0.0, &[z], t, &[p], &[d]).map(|e| e.value());
                let c = k(tau, y)?;
                let dt = (k(tau + h, y)? - k(tau - h, y)?) / (2.0 * h);
                let lap = (k(tau, y + h)? - 2.0 * c + k(tau, y - h)?) / (h * h);
                worst = worst.max((dt - lap + d * y * y * c).abs() / c);
            }
            Ok(worst)
        };
        let r = [level(0.04)?, level(0.02)?, level(0.01)?];
        let (a, b) = (r[0] / r[1], r[1] / r[2]);
        Ok((a >= 3.5 && b >= 3.5, format!("halving ratios {a:.2}, {b:.2}")))
    }

    fn action(&self) -> Outcome {
        let mut rng = self.rng(7);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (y, z) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let d = 10f64.powf(rng.random_range(-1.0..0.7));
            let tau = rng.random_range(0.2..2.0);
            let exact = action_distance(&[y], &[z], tau, &[d])?;
            worst = worst.max(rel(discrete_action(y, z, tau, d, self.cfg.action_segments)?, exact));
        }
        Ok((worst < 1e-4, format!("max rel diff vs {}-segment oracle {worst:.2e}", self.cfg.action_segments)))
    }

    fn semigroup(&self) -> Outcome {
        let nodes = trapezoid(-10.0, 10.0, self.cfg.quad_points.max(2));
        let spec = SpectralQ::diagonal(&[1.0])?;
        let mut worst: f64 = 0.0;
        for (y, z) in [(0.0, 0.0), (0.7, -1.2), (-1.5, 1.9)] {
            let mut composed = 0.0;
            for &(m, w) in &nodes {
                composed += w * kernel_p(0.0, &[y], 0.4, &[m], &spec)?.value() * kernel_p(0.4, &[m], 1.0, &[z], &spec)?.value();
            }
            worst = worst.max(rel(composed, kernel_p(0.0, &[y], 1.0, &[z], &spec)?.value()));
        }
        Ok((worst < 1e-5, format!("max rel err {worst:.2e}")))
    }

    /// Grid propagation of the constant and normal initial conditions
    /// against the closed forms, including a semidefinite `Q`.
    fn analytic_grid(&self) -> Outcome {
        let mut worst: f64 = 0.0;
        let cases: [(DMatrix<f64>, f64, Vec<usize>); 2] =
            [(dmatrix![2.0], 8.0, vec![801]), (dmatrix![2.0, 0.0; 0.0, 0.0], 12.0, vec![64, 64])];
        for (q, bound, counts) in cases {
            let n = q.nrows();
            let g = GridSpec::uniform(&vec![(-bound, bound); n], &counts)?;
            let spec = eigendecompose_q(&q, None)?;
            let k = self.kernel_matrix(&g, 0.0, 1.0, &spec)?;
            let ones = vec![1.0; g.len()];
            let normal: Vec<f64> =
                (0..g.len()).map(|i| (-0.5 * g.node(i).iter().map(|v| v * v).sum::<f64>()).exp() / (2.0 * std::f64::consts::PI).powf(n as f64 / 2.0)).collect();
            let u = k.forward_with(&ones, self.exec)?;
            let v = k.forward_with(&normal, self.exec)?;
            for i in (0..g.len()).filter(|&i| g.node(i).iter().all(|x| x.abs() <= 2.5)) {
                let x = g.node(i);
                worst = worst.max((u[i] - phihat_unity_spectral(1.0, x, &spec)?).abs());
                if spec.zero_idx().is_empty() {
                    worst = worst.max((v[i] - phihat_gaussian_spectral(1.0, x, &spec)?).abs());
                }
            }
        }
        Ok((worst < 1e-6, format!("max abs err {worst:.2e} (Q=2; Q=diag(2,0))")))
    }

    /// Chapman–Kolmogorov on the grid: K(0,0.4)·K(0.4,1) against K(0,1).
    fn grid_semigroup(&self) -> Outcome {
        let g = GridSpec::uniform(&[(-8.0, 8.0)], &[801])?;
        let spec = SpectralQ::diagonal(&[1.0])?;
        let f: Vec<f64> = (0..g.len()).map(|i| (-(g.node(i)[0] - 0.5).powi(2)).exp()).collect();
        let a = self.kernel_matrix(&g, 0.0, 0.4, &spec)?;
        let b = self.kernel_matrix(&g, 0.4, 1.0, &spec)?;
        let c = self.kernel_matrix(&g, 0.0, 1.0, &spec)?;
        let two = b.forward_with(&a.forward_with(&f, self.exec)?, self.exec)?;
        let one = c.forward_with(&f, self.exec)?;
        let scale = one.iter().cloned().fold(0.0, f64::max);
        let worst = two.iter().zip(&one).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
        Ok((worst < 1e-8, format!("max rel deviation {worst:.2e}")))
    }

    /// Sinkhorn on the configured problem, or a small bimodal-to-normal
    /// default when the config has none.
    fn sinkhorn(&self, problem: Option<&Problem>, opts: SinkhornOptions) -> Outcome {
        let fallback;
        let p = match problem {
            Some(p) => p,
            None => {
                let rho0 = DensitySpec::mixture(vec![0.5, 0.5], vec![Gaussian::scalar(-1.0, 0.1)?, Gaussian::scalar(1.0, 0.1)?])?;
                fallback = Problem {
                    spec: SpectralQ::diagonal(&[1.0])?,
                    t0: 0.0,
                    t1: 1.0,
                    grid: GridSpec::uniform(&[(-3.0, 3.0)], &[301])?,
                    rho0,
                    rho1: DensitySpec::Gaussian(Gaussian::scalar(0.0, 0.5)?),
                };
                &fallback
            }
        };
        let k = self.kernel_matrix(&p.grid, p.t0, p.t1, &p.spec)?;
        let s = sinkhorn_solve(&p.rho0, &p.rho1, &p.grid, &k, &opts)?;
        let ratio = s.contraction_ratio().unwrap_or(0.0);
        let pass = s.converged && s.residual0 < 1e-6 && s.residual1 < 1e-6 && ratio < 1.0;
        Ok((pass, format!("{} epochs, residuals {:.1e}/{:.1e}, ratio {ratio:.1e}", s.epoch, s.residual0, s.residual1)))
    }
}

/// Run every check and print the table. Fails with `VerifyFailed` when any
/// check fails or errors.
pub fn run(cfg: &LoadedConfig, exec: Exec, fault: Option<f64>) -> Result<(), CliError> {
    let problem = if cfg.config.problem.is_some() { Some(cfg.problem()?) } else { None };
    let opts = SinkhornOptions { tol: cfg.config.sinkhorn.tol, max_epochs: cfg.config.sinkhorn.max_epochs, exec };
    let suite = Suite { cfg: &cfg.config.verify, exec, fault };
    let checks: Vec<(&'static str, Runner<'_>)> = vec![
        ("Hermite orthogonality", Box::new(|| suite.hermite_orthogonality())),
        ("kernel vs Hermite series", Box::new(|| suite.series())),
        ("heat-kernel limit", Box::new(|| suite.heat_limit())),
        ("Mehler coincidence", Box::new(|| suite.mehler())),
        ("matrix M properties", Box::new(|| suite.matrix_m())),
        ("kernel total mass", Box::new(|| suite.mass())),
        ("PDE residual order", Box::new(|| suite.pde_order())),
        ("action distance", Box::new(|| suite.action())),
        ("semigroup (quadrature)", Box::new(|| suite.semigroup())),
        ("analytic φ̂ on grid", Box::new(|| suite.analytic_grid())),
        ("semigroup (grid matrices)", Box::new(|| suite.grid_semigroup())),
        ("Sinkhorn convergence", Box::new(|| suite.sinkhorn(problem.as_ref(), opts))),
    ];
    let (mut failed, total) = (0, checks.len());
    println!("{:<28} {:<6} detail", "check", "result");
    for (name, f) in checks {
        let start = Instant::now();
        let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        let seconds = start.elapsed().as_secs_f64();
        println!("{name:<28} {:<6} {detail} ({seconds:.2}s)", if pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    println!("verify: {} of {total} checks passed", total - failed);
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}
