//! `kernel`, `solve`, `simulate` and `analytic`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qsb_core::analytic::{phihat_gaussian_spectral, phihat_unity_spectral};
use qsb_core::density::domain_warnings;
use qsb_core::grid::{assemble_kernel_matrix_with, propagate};
use qsb_core::sde::{endpoint_stats, RNG_DESCRIPTION};
use qsb_core::{BridgeSolution, ControlSchedule, Exec, GridSpec, KernelPlan, PathEnsemble, SinkhornOptions, SinkhornState};
use serde_json::{json, Value};

use crate::config::{parse_row, problem_q, LoadedConfig, Problem};
use crate::error::CliError;
use crate::output::{self, coord_names, Table};

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub exec: Exec,
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub times: Vec<f64>,
    pub seed: Option<u64>,
}

impl Context {
    fn out_dir(&self, cfg: &LoadedConfig) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None if cfg.config.output.directory.is_absolute() => cfg.config.output.directory.clone(),
            None => cfg.base_dir.join(&cfg.config.output.directory),
        }
    }
}

fn config_json(cfg: &LoadedConfig) -> Value {
    serde_json::to_value(&cfg.config).expect("config serializes")
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Evaluate the kernel in original coordinates at the `(x, x2)` pairs listed
/// in `points` for every requested time. Writes to stdout unless `--out` is
/// given, in which case a run directory receives `kernel.csv`.
pub fn kernel(cfg: &LoadedConfig, ctx: &Context, points: &Path) -> Result<(), CliError> {
    let (_, spec, t0, t1) = problem_q(&cfg.config)?;
    let dim = spec.dim();
    let pairs = read_points(points, dim)?;
    let times = if ctx.times.is_empty() { vec![t1] } else { ctx.times.clone() };
    let plans = times
        .iter()
        .map(|&t| {
            let tau = qsb_core::error::check_times(t0, t).map_err(|e| CliError::Config(format!("--t {t}: {e}")))?;
            Ok(KernelPlan::new(&spec, tau)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let header: Vec<String> =
        ["t".to_string()].into_iter().chain(coord_names("x", dim)).chain(coord_names("x2_", dim)).chain(["log_kernel".into(), "kernel".into()]).collect();
    let write = |sink: &mut dyn Write| -> Result<(), CliError> {
        let mut table = Table::new(sink, &header)?;
        for (t, plan) in times.iter().zip(&plans) {
            for (x, x2) in &pairs {
                let lk = plan.log_kernel(x, x2);
                let row: Vec<f64> = [*t].iter().chain(x).chain(x2).cloned().chain([lk, lk.exp()]).collect();
                table.row(&row)?;
            }
        }
        table.finish()
    };
    match &ctx.out {
        None => write(&mut std::io::stdout().lock()),
        Some(out) => {
            let dir = output::create_run_dir(out, &output::config_hash(&cfg.text))?;
            let path = dir.join("kernel.csv");
            let mut file = std::fs::File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?;
            write(&mut file)?;
            println!("{}", dir.display());
            Ok(())
        }
    }
}

type PointPair = (Vec<f64>, Vec<f64>);

/// Rows of `x1..xn, x2_1..x2_n` from a CSV with a header line.
fn read_points(path: &Path, dim: usize) -> Result<Vec<PointPair>, CliError> {
    let shown = path.display();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
    let width = rdr.headers().map_err(|e| CliError::Config(format!("{shown}: {e}")))?.len();
    if width != 2 * dim {
        return Err(CliError::Config(format!("{shown}:1: expected {} columns (x then x2) for a {dim}-dimensional problem, found {width}", 2 * dim)));
    }
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = parse_row(&rec, 2 * dim).map_err(|e| CliError::Config(format!("{shown}:{line}: {e}")))?;
        pairs.push((row[..dim].to_vec(), row[dim..].to_vec()));
    }
    if pairs.is_empty() {
        return Err(CliError::Config(format!("{shown}: no points listed")));
    }
    Ok(pairs)
}

fn warn_domain(p: &Problem) {
    for (label, rho) in [("rho0", &p.rho0), ("rho1", &p.rho1)] {
        for w in domain_warnings(rho, &p.grid, label) {
            log::warn!("{w}");
        }
    }
}

/// Times at which to report the interior density, each inside the horizon.
fn density_times(cfg: &LoadedConfig, ctx: &Context, t0: f64, t1: f64) -> Result<Vec<f64>, CliError> {
    let times = if ctx.times.is_empty() { cfg.config.output.density_times.clone() } else { ctx.times.clone() };
    if let Some(&t) = times.iter().find(|&&t| !(t >= t0 && t <= t1)) {
        return Err(CliError::Config(format!("density time {t} lies outside [{t0}, {t1}]")));
    }
    Ok(times)
}

/// Solve the Schrödinger system and persist factors, trace, densities and a
/// manifest. Returns the run directory.
pub fn solve(cfg: &LoadedConfig, ctx: &Context) -> Result<PathBuf, CliError> {
    let p = cfg.problem()?;
    warn_domain(&p);
    let times = density_times(cfg, ctx, p.t0, p.t1)?;
    let opts = SinkhornOptions { tol: cfg.config.sinkhorn.tol, max_epochs: cfg.config.sinkhorn.max_epochs, exec: ctx.exec };
    if !(opts.tol > 0.0) || opts.max_epochs == 0 {
        return Err(CliError::Config("[sinkhorn] needs tol > 0 and max_epochs >= 1".into()));
    }

    let start = Instant::now();
    let k = assemble_kernel_matrix_with(&p.grid, p.t0, p.t1, &p.spec, ctx.exec)?;
    let t_assemble = secs(start);
    let start = Instant::now();
    let state = qsb_core::sinkhorn_solve(&p.rho0, &p.rho1, &p.grid, &k, &opts)?;
    let t_sinkhorn = secs(start);
    drop(k);
    log::info!("sinkhorn: converged={} after {} epochs", state.converged, state.epoch);

    let hash = output::config_hash(&cfg.text);
    let dir = output::create_run_dir(&ctx.out_dir(cfg), &hash)?;
    std::fs::write(dir.join("config.toml"), &cfg.text).map_err(CliError::io("writing config.toml"))?;
    let start = Instant::now();
    write_factors(&dir.join("factors.csv"), &p.grid, &state)?;
    write_trace(&dir.join("trace.csv"), &state)?;
    let mut written = vec!["config.toml", "factors.csv", "trace.csv"];
    if state.converged && !times.is_empty() {
        let sol = BridgeSolution::new(state.clone(), p.grid.clone(), p.spec.clone(), p.t0, p.t1)?.with_exec(ctx.exec);
        write_densities(&dir.join("density_t.csv"), &sol, &times)?;
        written.push("density_t.csv");
    }
    let t_output = secs(start);

    let mut m = output::manifest_base("solve", &hash, &config_json(cfg), ctx.threads);
    m.insert(
        "sinkhorn".into(),
        json!({
            "converged": state.converged,
            "epochs": state.epoch,
            "final_hilbert_distance": state.hilbert_trace.last(),
            "residual0": state.residual0,
            "residual1": state.residual1,
            "contraction_ratio": state.contraction_ratio(),
        }),
    );
    m.insert("grid_nodes".into(), p.grid.len().into());
    m.insert("density_times".into(), json!(times));
    m.insert("timings_s".into(), json!({ "assemble": t_assemble, "sinkhorn": t_sinkhorn, "output": t_output }));
    m.insert("files".into(), json!(written));
    output::write_json(&dir.join("manifest.json"), &Value::Object(m))?;
    println!("{}", dir.display());

    state.ensure_converged().map_err(CliError::NotConverged)?;
    Ok(dir)
}

fn write_factors(path: &Path, grid: &GridSpec, s: &SinkhornState) -> Result<(), CliError> {
    let header: Vec<String> = coord_names("x", grid.dim()).into_iter().chain(["phihat0", "phi0", "phihat1", "phi1"].map(String::from)).collect();
    let mut t = Table::create(path, &header)?;
    for i in 0..grid.len() {
        let row: Vec<f64> = grid.node(i).iter().cloned().chain([s.phihat0[i], s.phi0[i], s.phihat1[i], s.phi1[i]]).collect();
        t.row(&row)?;
    }
    t.finish()
}

fn write_trace(path: &Path, s: &SinkhornState) -> Result<(), CliError> {
    let header = ["epoch", "hilbert", "residual0", "residual1"].map(String::from);
    let mut t = Table::create(path, &header)?;
    for (e, (h, (r0, r1))) in s.hilbert_trace.iter().zip(&s.residual_trace).enumerate() {
        t.labelled_row(&[(e + 1).to_string()], &[*h, *r0, *r1])?;
    }
    t.finish()
}

fn write_densities(path: &Path, sol: &BridgeSolution, times: &[f64]) -> Result<(), CliError> {
    let grid = sol.grid();
    let dim = grid.dim();
    let header: Vec<String> =
        ["t".to_string()].into_iter().chain(coord_names("x", dim)).chain(["rho".to_string()]).chain(coord_names("u", dim)).collect();
    let mut t = Table::create(path, &header)?;
    for &time in times {
        let rho = sol.rho_opt(time)?;
        let field = sol.control_field(time)?;
        for (i, r) in rho.iter().enumerate() {
            let x = grid.node(i);
            let row: Vec<f64> = [time].into_iter().chain(x.iter().cloned()).chain([*r]).chain(field.eval(x)).collect();
            t.row(&row)?;
        }
    }
    t.finish()
}

/// Read back `factors.csv`, checking the nodes against `grid`.
fn read_factors(path: &Path, grid: &GridSpec) -> Result<[Vec<f64>; 4], CliError> {
    let shown = path.display();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::MissingSolve(format!("{shown}: {e}")))?;
    let dim = grid.dim();
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = parse_row(&rec, dim + 4).map_err(|e| CliError::Config(format!("{shown}:{line}: {e}")))?;
        if i >= grid.len() {
            return Err(CliError::Config(format!("{shown}: more rows than the {} grid nodes", grid.len())));
        }
        let node = grid.node(i);
        let scale: f64 = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
        if (0..dim).any(|k| (row[k] - node[k]).abs() > 1e-9 * scale) {
            return Err(CliError::Config(format!("{shown}:{line}: node does not match the config grid")));
        }
        for c in 0..4 {
            cols[c].push(row[dim + c]);
        }
    }
    if cols[0].len() != grid.len() {
        return Err(CliError::Config(format!("{shown}: {} rows for {} grid nodes", cols[0].len(), grid.len())));
    }
    Ok(cols)
}

/// Locate the solve directory for `cfg`: `--run` if given, else the latest
/// run under the output directory with a matching config hash.
fn find_run(cfg: &LoadedConfig, ctx: &Context, run: Option<&Path>) -> Result<PathBuf, CliError> {
    let hash = output::config_hash(&cfg.text);
    let dir = match run {
        Some(r) => r.to_path_buf(),
        None => {
            let out = ctx.out_dir(cfg);
            output::latest_run(&out, &hash).ok_or_else(|| {
                CliError::MissingSolve(format!("no solve run for config hash {hash} under {}; run `qsb solve` first", out.display()))
            })?
        }
    };
    let manifest = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest).map_err(|_| CliError::MissingSolve(format!("{} has no manifest.json", dir.display())))?;
    let m: Value = serde_json::from_str(&text).map_err(|e| CliError::MissingSolve(format!("{}: {e}", manifest.display())))?;
    if m["command"] != "solve" {
        return Err(CliError::MissingSolve(format!("{} is not a solve run", dir.display())));
    }
    if m["sinkhorn"]["converged"] != true {
        return Err(CliError::MissingSolve(format!("the solve in {} did not converge", dir.display())));
    }
    Ok(dir)
}

/// Simulate closed-loop paths from a prior solve. Writes `paths.csv`,
/// `stats.csv` and a manifest into a fresh subdirectory of the run.
pub fn simulate(cfg: &LoadedConfig, ctx: &Context, run: Option<&Path>) -> Result<PathBuf, CliError> {
    let p = cfg.problem()?;
    let run_dir = find_run(cfg, ctx, run)?;
    let [phihat0, phi0, phihat1, phi1] = read_factors(&run_dir.join("factors.csv"), &p.grid)?;
    let state = SinkhornState {
        phihat0,
        phi0,
        phihat1,
        phi1,
        epoch: 0,
        hilbert_trace: Vec::new(),
        residual_trace: Vec::new(),
        converged: true,
        residual0: f64::NAN,
        residual1: f64::NAN,
    };
    let sde = &cfg.config.sde;
    let seed = ctx.seed.unwrap_or(sde.seed);
    if sde.n_paths == 0 {
        return Err(CliError::Config("[sde] n_paths must be at least 1".into()));
    }
    let stride = cfg.config.output.path_stride.max(1);

    let sol = BridgeSolution::new(state, p.grid.clone(), p.spec.clone(), p.t0, p.t1)?.with_exec(ctx.exec);
    let start = Instant::now();
    let schedule = ControlSchedule::new(&sol, sde.dt)?;
    let t_schedule = secs(start);
    let start = Instant::now();
    let ens = schedule.simulate(&p.rho0, sde.n_paths, seed, ctx.exec)?;
    let t_simulate = secs(start);
    if ens.total_clamps() > 0 {
        log::warn!("{} steps were clamped back onto the grid; consider wider bounds", ens.total_clamps());
    }

    let dir = output::create_run_dir(&run_dir, &format!("sim{seed}"))?;
    write_paths(&dir.join("paths.csv"), &ens, stride)?;
    write_stats(&dir.join("stats.csv"), &ens, &p)?;
    let mut m = output::manifest_base("simulate", &output::config_hash(&cfg.text), &config_json(cfg), ctx.threads);
    m.insert("solve_run".into(), run_dir.display().to_string().into());
    m.insert("seed".into(), seed.into());
    m.insert("n_paths".into(), sde.n_paths.into());
    m.insert("dt".into(), sde.dt.into());
    m.insert("path_stride".into(), stride.into());
    m.insert("rng".into(), RNG_DESCRIPTION.into());
    m.insert("clamped_steps".into(), ens.total_clamps().into());
    m.insert("timings_s".into(), json!({ "control_schedule": t_schedule, "simulate": t_simulate }));
    output::write_json(&dir.join("manifest.json"), &Value::Object(m))?;
    println!("{}", dir.display());
    Ok(dir)
}

fn write_paths(path: &Path, ens: &PathEnsemble, stride: usize) -> Result<(), CliError> {
    let header: Vec<String> = ["path_id".to_string(), "t".to_string()].into_iter().chain(coord_names("x", ens.dim)).collect();
    let mut t = Table::create(path, &header)?;
    let last = ens.times.len() - 1;
    for p in 0..ens.n_paths {
        let id = [p.to_string()];
        for k in (0..=last).filter(|&k| k % stride == 0 || k == last) {
            let row: Vec<f64> = [ens.times[k]].into_iter().chain(ens.state(p, k).iter().cloned()).collect();
            t.labelled_row(&id, &row)?;
        }
    }
    t.finish()
}

/// Long-format `statistic, empirical, target` report on the terminal law.
/// The target cell is empty where `rho1` prescribes nothing.
fn write_stats(path: &Path, ens: &PathEnsemble, p: &Problem) -> Result<(), CliError> {
    let stats = endpoint_stats(ens, &p.rho1);
    let (mean, cov) = (p.rho1.mean(), p.rho1.covariance());
    let mut rows: Vec<(String, f64, Option<f64>)> = vec![("n_paths".into(), stats.n as f64, None)];
    for (k, (m, target)) in stats.mean.iter().zip(&mean).enumerate() {
        rows.push((format!("mean{}", k + 1), *m, Some(*target)));
    }
    for r in 0..ens.dim {
        for c in 0..ens.dim {
            rows.push((format!("cov{}{}", r + 1, c + 1), stats.cov[r][c], Some(cov[(r, c)])));
        }
    }
    for k in 0..ens.dim {
        rows.push((format!("ks{}", k + 1), stats.ks[k], Some(0.0)));
    }
    rows.push(("time_avg_second_moment".into(), ens.time_averaged_second_moment(), None));

    let header = ["statistic", "empirical", "target"].map(String::from);
    let mut t = Table::create(path, &header)?;
    for (name, value, target) in rows {
        t.labelled_row(&[name, output::fmt(value), target.map(output::fmt).unwrap_or_default()], &[])?;
    }
    t.finish()
}

/// Closed-form `φ̂` for the constant and standard-normal initial conditions
/// at each requested time on the config grid. When the config names `rho0`,
/// its grid propagation is added as a third column (for tabulated initial
/// conditions such as the Himmelblau density).
pub fn analytic(cfg: &LoadedConfig, ctx: &Context) -> Result<(), CliError> {
    let (_, spec, t0, t1) = problem_q(&cfg.config)?;
    let grid_cfg = cfg.config.grid.as_ref().ok_or_else(|| CliError::Config("missing [grid] section".into()))?;
    let bounds: Vec<(f64, f64)> = grid_cfg.bounds.iter().map(|b| (b[0], b[1])).collect();
    let grid = GridSpec::uniform(&bounds, &grid_cfg.counts).map_err(|e| CliError::Config(format!("[grid]: {e}")))?;
    if grid.dim() != spec.dim() {
        return Err(CliError::Config(format!("[grid] has {} axes but q is {}×{}", grid.dim(), spec.dim(), spec.dim())));
    }
    let rho0 = match &cfg.config.endpoints {
        Some(e) => {
            let d = e.rho0.build(&cfg.base_dir).map_err(|e| CliError::Config(format!("[endpoints.rho0]: {e}")))?;
            Some(d.discretize(&grid)?.values)
        }
        None => None,
    };
    let times = if ctx.times.is_empty() { vec![t1] } else { ctx.times.clone() };
    let dim = grid.dim();
    let mut header: Vec<String> =
        ["t".to_string()].into_iter().chain(coord_names("x", dim)).chain(["phihat_unity".into(), "phihat_gaussian".into()]).collect();
    if rho0.is_some() {
        header.push("phihat_rho0".into());
    }

    let write = |sink: &mut dyn Write| -> Result<(), CliError> {
        let mut table = Table::new(sink, &header)?;
        for &t in &times {
            let tau = qsb_core::error::check_times(t0, t).map_err(|e| CliError::Config(format!("--t {t}: {e}")))?;
            let propagated = match &rho0 {
                Some(f) => Some(propagate(&grid, &spec, tau, f, ctx.exec)?),
                None => None,
            };
            for i in 0..grid.len() {
                let x = grid.node(i);
                let mut row: Vec<f64> = [t].into_iter().chain(x.iter().cloned()).collect();
                row.push(phihat_unity_spectral(tau, x, &spec)?);
                row.push(phihat_gaussian_spectral(tau, x, &spec)?);
                if let Some(g) = &propagated {
                    row.push(g[i]);
                }
                table.row(&row)?;
            }
        }
        table.finish()
    };
    match &ctx.out {
        None => write(&mut std::io::stdout().lock()),
        Some(out) => {
            let dir = output::create_run_dir(out, &output::config_hash(&cfg.text))?;
            let path = dir.join("analytic.csv");
            let mut file = std::fs::File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?;
            write(&mut file)?;
            println!("{}", dir.display());
            Ok(())
        }
    }
}
