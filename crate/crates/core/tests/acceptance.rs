//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::{dmatrix, DMatrix};
use qsb_core::analytic::{action_distance, discrete_action, heat_limit_check};
use qsb_core::analytic::{phihat_gaussian, phihat_gaussian_spectral, phihat_unity, phihat_unity_spectral};
use qsb_core::grid::{apply_forward, assemble_kernel_matrix};
use qsb_core::hermite::kernel_series_oracle;
use qsb_core::kernels::{kernel_mass, kernel_p, kernel_pp, mehler_kernel};
use qsb_core::sde::{endpoint_stats, ControlSchedule};
use qsb_core::spectral::{build_matrix_m, symplectic_factor_check};
use qsb_core::{build_grid, eigendecompose_q, sinkhorn_solve, BridgeSolution, DensitySpec, Exec, Gaussian, SinkhornOptions, SpectralQ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn series_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (y, z) = (uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, -2.0, 2.0));
        for d in [0.25, 1.0, 4.0] {
            for tau in [0.5, 1.0] {
                let closed = kernel_pp(0.0, &[y], tau, &[z], &[d]).unwrap().value();
                let series = kernel_series_oracle(0.0, tau, &[y], &[z], &[d], 80).unwrap();
                worst = worst.max((closed - series).abs());
            }
        }
    }
    outcome(worst < 1e-8, format!("max |closed - series| = {worst:.2e} over 300 evaluations (tol 1e-8)"))
}

fn heat_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
        .map(|_| {
            let mut p = || vec![uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, -2.0, 2.0)];
            (p(), p())
        })
        .collect();
    let errs: Vec<f64> = [1e-4, 1e-6, 1e-8].iter().map(|&d| heat_limit_check(d, &pts, 1.0).unwrap()).collect();
    let pass = errs[2] < 1e-4 && errs[0] > errs[1] && errs[1] > errs[2];
    outcome(pass, format!("rel err at d=1e-4,1e-6,1e-8: {:.2e}, {:.2e}, {:.2e}", errs[0], errs[1], errs[2]))
}

fn mehler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let y: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let tau = uniform(&mut rng, 0.05, 3.0);
        let a = kernel_pp(0.0, &y, tau, &z, &vec![1.0; n]).unwrap().value();
        let b = mehler_kernel(0.0, &y, tau, &z).unwrap().value();
        worst = worst.max(rel(a, b));
    }
    outcome(worst < 1e-12, format!("max rel diff = {worst:.2e} over 100 tuples (tol 1e-12)"))
}

fn matrix_m() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut min_eig, mut det_err, mut sym_res) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = rng.random_range(1..=4);
        let d: Vec<f64> = (0..m).map(|_| 10f64.powf(uniform(&mut rng, -3.0, 3.0))).collect();
        let tau = 10f64.powf(uniform(&mut rng, -2.0, 1.0));
        let mm = build_matrix_m(&d, tau).unwrap();
        min_eig = min_eig.min(mm.min_eigenvalue());
        det_err = det_err.max(rel(mm.det(), d.iter().product()));
        sym_res = sym_res.max(symplectic_factor_check(&mm).residual);
    }
    let pass = min_eig > 0.0 && det_err < 1e-8 && sym_res < 1e-8;
    outcome(pass, format!("min eig {min_eig:.2e}, max det rel err {det_err:.2e}, max symplectic residual {sym_res:.2e}"))
}

fn trapezoid_weights(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (n - 1) as f64;
    let xs = (0..n).map(|i| lo + i as f64 * h).collect();
    let ws = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
    (xs, ws)
}

fn kernel_total_mass() -> Outcome {
    let (xs, ws) = trapezoid_weights(-12.0, 12.0, 800);
    let mut total = 0.0;
    for (y, wy) in xs.iter().zip(&ws) {
        for (z, wz) in xs.iter().zip(&ws) {
            total += wy * wz * kernel_pp(0.0, &[*y], 1.0, &[*z], &[1.0]).unwrap().value();
        }
    }
    let mass = kernel_mass(0.0, 1.0, &[1.0]).unwrap();
    let printed = 1.0 / (1.0 * 2f64.sinh()).sqrt();
    let err = rel(total, mass);
    outcome(
        err < 1e-6,
        format!(
            "quadrature {total:.10} vs kernel_mass {mass:.10}: rel err {err:.2e}; ratio to ∏(√d sinh 2τ√d)^(-1/2) = {:.10} = √(2π)",
            total / printed
        ),
    )
}

/// Independent residual of `∂τκ = ∂²κ - d y² κ` by central differences.
fn pde_residual_level(h: f64) -> f64 {
    let cases = [(1.0, 0.6, 0.4, -0.3), (0.25, 1.0, -1.1, 0.7), (4.0, 0.5, 0.2, 0.5)];
    cases
        .iter()
        .map(|&(d, tau, y, z)| {
            let k = |t: f64, p: f64| kernel_pp(0.0, &[z], t, &[p], &[d]).unwrap().value();
            let c = k(tau, y);
            let dt = (k(tau + h, y) - k(tau - h, y)) / (2.0 * h);
            let lap = (k(tau, y + h) - 2.0 * c + k(tau, y - h)) / (h * h);
            (dt - lap + d * y * y * c).abs() / c
        })
        .fold(0.0, f64::max)
}

fn pde_residual() -> Outcome {
    let r: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&h| pde_residual_level(h)).collect();
    let (a, b) = (r[0] / r[1], r[1] / r[2]);
    outcome(
        a >= 3.5 && b >= 3.5,
        format!("residuals {:.2e}, {:.2e}, {:.2e}; ratios {a:.3}, {b:.3} (need >= 3.5)", r[0], r[1], r[2]),
    )
}

fn action() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (y, z) = (uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, -2.0, 2.0));
        let d = 10f64.powf(uniform(&mut rng, -1.0, 0.7));
        let tau = uniform(&mut rng, 0.2, 2.0);
        let exact = action_distance(&[y], &[z], tau, &[d]).unwrap();
        let oracle = discrete_action(y, z, tau, d, 400).unwrap();
        worst = worst.max(rel(oracle, exact));
    }
    outcome(worst < 1e-4, format!("max rel diff vs discrete oracle (K=400) = {worst:.2e} (tol 1e-4)"))
}

fn analytic_vs_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    let mut check = |label: &str, q: DMatrix<f64>, bound: f64, counts: Vec<usize>, gaussian: bool, t: f64| {
        let n = q.nrows();
        let g = build_grid(&vec![(-bound, bound); n], &counts).unwrap();
        let spec = eigendecompose_q(&q, None).unwrap();
        let f: Vec<f64> = (0..g.len())
            .map(|i| {
                if gaussian {
                    let r2: f64 = g.node(i).iter().map(|v| v * v).sum();
                    (-0.5 * r2).exp() / (2.0 * std::f64::consts::PI).powf(n as f64 / 2.0)
                } else {
                    1.0
                }
            })
            .collect();
        let k = assemble_kernel_matrix(&g, 0.0, t, &spec).unwrap();
        let numeric = apply_forward(&k, &f).unwrap();
        let candidates: Vec<usize> = (0..g.len()).filter(|&i| g.node(i).iter().all(|v| v.abs() <= 2.5)).collect();
        let mut err: f64 = 0.0;
        for _ in 0..20 {
            let i = candidates[rng.random_range(0..candidates.len())];
            let x = g.node(i);
            let exact = match (gaussian, spec.zero_idx().is_empty()) {
                (false, true) => phihat_unity(t, x, &q).unwrap(),
                (true, true) => phihat_gaussian(t, x, &q).unwrap(),
                (false, false) => phihat_unity_spectral(t, x, &spec).unwrap(),
                (true, false) => phihat_gaussian_spectral(t, x, &spec).unwrap(),
            };
            err = err.max((numeric[i] - exact).abs());
        }
        lines.push(format!("{label} {err:.1e}"));
        worst = worst.max(err);
    };
    check("Q=2 unity", dmatrix![2.0], 8.0, vec![801], false, 1.0);
    check("Q=2 normal", dmatrix![2.0], 8.0, vec![801], true, 0.5);
    check("Q=2I unity", dmatrix![2.0, 0.0; 0.0, 2.0], 8.0, vec![64, 64], false, 1.0);
    check("Q=2I normal", dmatrix![2.0, 0.0; 0.0, 2.0], 8.0, vec![64, 64], true, 0.5);
    check("Q=diag(2,0) unity", dmatrix![2.0, 0.0; 0.0, 0.0], 12.0, vec![64, 64], false, 1.0);
    outcome(worst < 1e-6, format!("max abs err over 20 nodes each: {}", lines.join(", ")))
}

fn bimodal_endpoints() -> (DensitySpec, DensitySpec) {
    let rho0 = DensitySpec::mixture(vec![0.5, 0.5], vec![Gaussian::scalar(-1.0, 0.05).unwrap(), Gaussian::scalar(1.0, 0.05).unwrap()]).unwrap();
    let rho1 = DensitySpec::Gaussian(Gaussian::scalar(0.0, 0.5).unwrap());
    (rho0, rho1)
}

fn bimodal_bridge(q: f64) -> BridgeSolution {
    let (rho0, rho1) = bimodal_endpoints();
    let g = build_grid(&[(-2.5, 2.5)], &[801]).unwrap();
    let spec = SpectralQ::diagonal(&[q / 2.0]).unwrap();
    let k = assemble_kernel_matrix(&g, 0.0, 1.0, &spec).unwrap();
    let state = sinkhorn_solve(&rho0, &rho1, &g, &k, &SinkhornOptions::default()).unwrap();
    BridgeSolution::new(state, g, spec, 0.0, 1.0).unwrap()
}

fn sinkhorn_bimodal() -> Outcome {
    let b = bimodal_bridge(2.0);
    let s = b.state();
    let ratio = s.contraction_ratio().unwrap_or(f64::NAN);
    let pass = s.converged && s.residual0 < 1e-6 && s.residual1 < 1e-6 && ratio < 1.0;
    outcome(
        pass,
        format!(
            "converged={} in {} epochs, L1 residuals {:.2e} / {:.2e}, fitted Hilbert ratio {ratio:.2e}",
            s.converged, s.epoch, s.residual0, s.residual1
        ),
    )
}

fn regularization() -> Outcome {
    let (rho0, _) = bimodal_endpoints();
    let moment = |q: f64| {
        let b = bimodal_bridge(q);
        let sched = ControlSchedule::new(&b, 1e-3).unwrap();
        sched.simulate(&rho0, 2000, 42, Exec::default()).unwrap().time_averaged_second_moment()
    };
    let (m2, m0) = (moment(2.0), moment(0.0));
    outcome(m2 < m0, format!("time-averaged E[x²]: Q=2 {m2:.5} < Q=0 {m0:.5}"))
}

fn terminal_law() -> Outcome {
    let (rho0, rho1) = bimodal_endpoints();
    let b = bimodal_bridge(2.0);
    let sched = ControlSchedule::new(&b, 1e-3).unwrap();
    let ks: Vec<f64> = (0..10u64)
        .map(|seed| endpoint_stats(&sched.simulate(&rho0, 2000, seed, Exec::default()).unwrap(), &rho1).ks[0])
        .collect();
    let worst = ks.iter().cloned().fold(0.0, f64::max);
    outcome(worst < 0.05, format!("KS over 10 seeds: max {worst:.4}, min {:.4} (tol 0.05)", ks.iter().cloned().fold(1.0, f64::min)))
}

fn semigroup() -> Outcome {
    let (xs, ws) = trapezoid_weights(-10.0, 10.0, 2000);
    let spec = SpectralQ::diagonal(&[1.0]).unwrap();
    let mut worst: f64 = 0.0;
    for (y, z) in [(0.0, 0.0), (0.7, -1.2), (-1.5, 1.9), (2.0, 1.0)] {
        let composed: f64 = xs
            .iter()
            .zip(&ws)
            .map(|(m, w)| w * kernel_p(0.0, &[y], 0.4, &[*m], &spec).unwrap().value() * kernel_p(0.4, &[*m], 1.0, &[z], &spec).unwrap().value())
            .sum();
        let direct = kernel_p(0.0, &[y], 1.0, &[z], &spec).unwrap().value();
        worst = worst.max(rel(composed, direct));
    }
    outcome(worst < 1e-5, format!("max rel err of ∫κ(0,y;0.4,m)κ(0.4,m;1,z)dm vs κ(0,y;1,z) = {worst:.2e}"))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("kernel vs Hermite series", Duration::from_secs(5), series_oracle),
        ("heat-kernel limit", Duration::from_secs(1), heat_limit),
        ("Mehler coincidence", Duration::from_secs(1), mehler),
        ("matrix M properties", Duration::from_secs(2), matrix_m),
        ("kernel total mass", Duration::from_secs(30), kernel_total_mass),
        ("PDE residual order", Duration::from_secs(10), pde_residual),
        ("action distance", Duration::from_secs(5), action),
        ("analytic φ̂ vs grid", Duration::from_secs(20), analytic_vs_grid),
        ("Sinkhorn on bimodal-to-normal", Duration::from_secs(60), sinkhorn_bimodal),
        ("regularization effect", Duration::from_secs(60), regularization),
        ("closed-loop terminal law", Duration::from_secs(120), terminal_law),
        ("semigroup property", Duration::from_secs(5), semigroup),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "[{:>2}] {} {name}: {} ({:.2}s, budget {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
