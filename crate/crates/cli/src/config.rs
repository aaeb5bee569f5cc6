//! Run configuration: TOML schema, validation and conversion to core types.
//!
//! ```toml
//! [problem]
//! q = [[2.0]]           # symmetric positive semidefinite, one row per line
//! t0 = 0.0
//! t1 = 1.0
//!
//! [grid]
//! bounds = [[-2.5, 2.5]]
//! counts = [801]
//!
//! [endpoints.rho0]
//! kind = "mixture"      # "gaussian" | "mixture" | "tabulated"
//! weights = [0.5, 0.5]
//! components = [{ mean = [-1.0], cov = [[0.0025]] }, { mean = [1.0], cov = [[0.0025]] }]
//!
//! [endpoints.rho1]
//! kind = "gaussian"
//! mean = [0.0]
//! cov = [[0.25]]
//!
//! [sinkhorn]            # optional
//! tol = 1e-10
//! max_epochs = 5000
//!
//! [sde]                 # optional
//! n_paths = 2000
//! dt = 1e-3
//! seed = 1
//!
//! [output]              # optional
//! directory = "runs"
//! density_times = [0.25, 0.5, 0.75]
//! path_stride = 10
//! ```
//!
//! A tabulated endpoint reads `file`, a CSV with header `x1[,x2],density`
//! listing a uniform grid in row-major order (last coordinate fastest).
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use qsb_core::density::Gaussian;
use qsb_core::{eigendecompose_q, DensitySpec, GridSpec, SpectralQ, TabulatedDensity};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<ProblemConfig>,
    pub endpoints: Option<EndpointsConfig>,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub q: Vec<Vec<f64>>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "one")]
    pub t1: f64,
    pub zero_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsConfig {
    pub rho0: EndpointConfig,
    pub rho1: EndpointConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EndpointConfig {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Mixture { weights: Vec<f64>, components: Vec<ComponentConfig> },
    Tabulated { file: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub bounds: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { tol: 1e-10, max_epochs: 5000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig { n_paths: 2000, dt: 1e-3, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub density_times: Vec<f64>,
    /// Keep every `path_stride`-th time step in paths.csv (the last step is
    /// always kept).
    pub path_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: PathBuf::from("runs"), density_times: Vec::new(), path_stride: 10 }
    }
}

/// Sizes for `qsb verify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub samples: usize,
    pub series_terms: usize,
    pub sweep: usize,
    pub mass_nodes: usize,
    pub quad_points: usize,
    pub action_segments: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { seed: 7, samples: 50, series_terms: 80, sweep: 200, mass_nodes: 400, quad_points: 2000, action_segments: 400 }
    }
}

fn one() -> f64 {
    1.0
}

/// A parsed config together with its raw text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, text, base_dir })
    }

    pub fn empty() -> Self {
        LoadedConfig { config: RunConfig::default(), text: String::new(), base_dir: PathBuf::new() }
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        Problem::build(&self.config, &self.base_dir)
    }
}

pub fn parse(text: &str) -> Result<RunConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

/// The pieces of a config every solve needs, converted to core types.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: SpectralQ,
    pub t0: f64,
    pub t1: f64,
    pub grid: GridSpec,
    pub rho0: DensitySpec,
    pub rho1: DensitySpec,
}

impl Problem {
    fn build(cfg: &RunConfig, base: &Path) -> Result<Self, CliError> {
        let (_, spec, t0, t1) = problem_q(cfg)?;
        let grid_cfg = cfg.grid.as_ref().ok_or_else(|| missing("grid"))?;
        let bounds: Vec<(f64, f64)> = grid_cfg.bounds.iter().map(|b| (b[0], b[1])).collect();
        let grid = GridSpec::uniform(&bounds, &grid_cfg.counts).map_err(|e| CliError::Config(format!("[grid]: {e}")))?;
        if grid.dim() != spec.dim() {
            return Err(CliError::Config(format!("[grid] has {} axes but q is {}×{}", grid.dim(), spec.dim(), spec.dim())));
        }
        let ends = cfg.endpoints.as_ref().ok_or_else(|| missing("endpoints"))?;
        let rho0 = ends.rho0.build(base).map_err(|e| CliError::Config(format!("[endpoints.rho0]: {e}")))?;
        let rho1 = ends.rho1.build(base).map_err(|e| CliError::Config(format!("[endpoints.rho1]: {e}")))?;
        for (label, rho) in [("rho0", &rho0), ("rho1", &rho1)] {
            if rho.dim() != grid.dim() {
                return Err(CliError::Config(format!("[endpoints.{label}] has dimension {} but the grid has {}", rho.dim(), grid.dim())));
            }
        }
        Ok(Problem { spec, t0, t1, grid, rho0, rho1 })
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing [{section}] section"))
}

/// `Q`, its spectral split and the horizon; validates `t1 > t0`.
pub fn problem_q(cfg: &RunConfig) -> Result<(DMatrix<f64>, SpectralQ, f64, f64), CliError> {
    let p = cfg.problem.as_ref().ok_or_else(|| missing("problem"))?;
    let q = matrix(&p.q).map_err(|e| CliError::Config(format!("[problem] q: {e}")))?;
    let spec = eigendecompose_q(&q, p.zero_tol).map_err(|e| CliError::Config(format!("[problem] q: {e}")))?;
    if !(p.t0.is_finite() && p.t1.is_finite()) {
        return Err(CliError::Config("[problem] t0 and t1 must be finite".into()));
    }
    qsb_core::error::check_times(p.t0, p.t1).map_err(|e| CliError::Config(format!("[problem]: {e}")))?;
    Ok((q, spec, p.t0, p.t1))
}

/// Square matrix from rows.
pub fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 {
        return Err("matrix is empty".into());
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(format!("expected {n} columns per row, found a row with {}", r.len()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl EndpointConfig {
    pub fn build(&self, base: &Path) -> Result<DensitySpec, String> {
        match self {
            EndpointConfig::Gaussian { mean, cov } => {
                DensitySpec::gaussian(mean.clone(), matrix(cov)?).map_err(|e| e.to_string())
            }
            EndpointConfig::Mixture { weights, components } => {
                let comps = components
                    .iter()
                    .map(|c| Gaussian::new(c.mean.clone(), matrix(&c.cov)?).map_err(|e| e.to_string()))
                    .collect::<Result<Vec<_>, String>>()?;
                DensitySpec::mixture(weights.clone(), comps).map_err(|e| e.to_string())
            }
            EndpointConfig::Tabulated { file } => {
                let path = if file.is_absolute() { file.clone() } else { base.join(file) };
                read_tabulated(&path).map(DensitySpec::Tabulated)
            }
        }
    }
}

/// Read a tabulated density CSV (`x1[,x2],density`, row-major, uniform).
pub fn read_tabulated(path: &Path) -> Result<TabulatedDensity, String> {
    let shown = path.display();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{shown}: {e}"))?;
    let headers = rdr.headers().map_err(|e| format!("{shown}: {e}"))?.clone();
    let dim = headers.len().checked_sub(1).filter(|d| (1..=2).contains(d)).ok_or_else(|| {
        format!("{shown}: expected columns x1[,x2],density, found {} columns", headers.len())
    })?;
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format!("{shown}: {e}"))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = parse_row(&rec, dim + 1).map_err(|e| format!("{shown}:{line}: {e}"))?;
        coords.push(row[..dim].to_vec());
        values.push(row[dim]);
    }
    // Axis k takes the distinct values of column k in order of appearance.
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); dim];
    for c in &coords {
        for k in 0..dim {
            if !axes[k].contains(&c[k]) {
                axes[k].push(c[k]);
            }
        }
    }
    let counts: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = counts.iter().product();
    if total != values.len() {
        return Err(format!("{shown}: {} rows do not form a full {:?} grid", values.len(), counts));
    }
    for (r, c) in coords.iter().enumerate() {
        let mut rest = r;
        for k in (0..dim).rev() {
            let expect = axes[k][rest % counts[k]];
            rest /= counts[k];
            if c[k] != expect {
                return Err(format!("{shown}:{}: rows are not in row-major order (last coordinate fastest)", r + 2));
            }
        }
    }
    let bounds: Vec<(f64, f64)> = axes.iter().map(|a| (a[0], a[a.len() - 1])).collect();
    for (k, a) in axes.iter().enumerate() {
        if a.len() < 2 {
            return Err(format!("{shown}: axis {k} needs at least two values"));
        }
        let h = (bounds[k].1 - bounds[k].0) / (a.len() - 1) as f64;
        let uneven = a.iter().enumerate().any(|(i, &v)| (v - (bounds[k].0 + i as f64 * h)).abs() > 1e-9 * h.abs().max(1.0));
        if uneven {
            return Err(format!("{shown}: axis {k} is not uniformly spaced"));
        }
    }
    TabulatedDensity::new(&bounds, &counts, values).map_err(|e| format!("{shown}: {e}"))
}

/// Parse `n` float fields from a CSV record.
pub fn parse_row(rec: &csv::StringRecord, n: usize) -> Result<Vec<f64>, String> {
    if rec.len() != n {
        return Err(format!("expected {n} fields, found {}", rec.len()));
    }
    rec.iter()
        .enumerate()
        .map(|(i, s)| s.trim().parse::<f64>().map_err(|_| format!("field {}: cannot parse {s:?} as a number", i + 1)))
        .collect()
}
