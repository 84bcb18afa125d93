//! Experiment configuration (TOML).
//!
//! ```toml
//! [graph]
//! kind = "geometric"        # or "file" with path = "edges.txt"
//! nodes = 15
//! radius = 0.5
//! weight = 0.07
//! seed = 42
//!
//! [ensemble]
//! dim = 5
//! target = { kind = "smooth", tau = [1, 2, 3, 4, 5] }
//! profile = { kind = "varying", seed = 1 }
//!
//! [algorithm]
//! mu = 1e-3                 # number or list
//! eta = [0, 1, 5, 20]       # or eta_range = [start, stop, step], eta_logspace = [lo, hi, points]
//! n_runs = 200
//! seed = 2024
//!
//! [output]
//! dir = "out/fig3"
//! formats = ["csv", "svg"]
//! db = true
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smoothnet::graph::{parse_edge_list, random_geometric};
use smoothnet::tasks::{varying_profile_in, Covariance};
use smoothnet::{build_graph, make_smooth_target, Graph, StackedSignal, TaskEnsemble};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub filter: FilterSpec,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Geometric { nodes: usize, radius: f64, weight: f64, seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub dim: usize,
    pub target: TargetSpec,
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Spectral decay `exp(-tau_j lambda_m) / sqrt(M)` per frequency.
    Smooth { tau: Vec<f64> },
    /// One row of `M` values per agent.
    Values { values: Vec<Vec<f64>> },
    /// Whitespace-separated text file, one agent per line, `#` comments.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// Same covariance and noise variance at every agent. Give either
    /// `sigma_u2` (scalar covariance) or a full `covariance` matrix.
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_u2: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance: Option<Vec<Vec<f64>>>,
        noise_var: f64,
    },
    /// Scalar per-agent variances drawn uniformly from the ranges.
    Varying {
        seed: u64,
        #[serde(default = "default_sigma_u2_range")]
        sigma_u2_range: [f64; 2],
        #[serde(default = "default_noise_var_range")]
        noise_var_range: [f64; 2],
    },
    /// Explicit per-agent scalar variances.
    Scalar { sigma_u2: Vec<f64>, noise_var: Vec<f64> },
    /// Explicit per-agent covariance matrices.
    Full { covariances: Vec<Vec<Vec<f64>>>, noise_var: Vec<f64> },
    /// Text file, one agent per line: noise variance then the `M x M`
    /// covariance in row-major order.
    File { path: PathBuf },
}

fn default_sigma_u2_range() -> [f64; 2] {
    [0.8, 1.2]
}

fn default_noise_var_range() -> [f64; 2] {
    [0.05, 0.15]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub mu: Option<OneOrMany>,
    pub eta: Option<OneOrMany>,
    /// `[start, stop, step]`, inclusive of `stop` up to rounding.
    pub eta_range: Option<[f64; 3]>,
    /// `[lo, hi, points]`, log-spaced with both ends included.
    pub eta_logspace: Option<[f64; 3]>,
    /// Iterations per run; the default horizon when absent.
    pub n_iters: Option<usize>,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of trailing iterations averaged for steady-state values.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Upper end of the small-eta region used for bias slope fits.
    #[serde(default = "default_slope_eta_max")]
    pub slope_eta_max: f64,
    /// Runs per simulated spot check in `sweep-eta`; 0 disables it.
    #[serde(default)]
    pub spot_check_runs: usize,
}

fn default_runs() -> usize {
    1
}

fn default_window() -> f64 {
    0.1
}

fn default_slope_eta_max() -> f64 {
    0.1
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        Self {
            mu: None,
            eta: None,
            eta_range: None,
            eta_logspace: None,
            n_iters: None,
            n_runs: default_runs(),
            seed: 0,
            window: default_window(),
            slope_eta_max: default_slope_eta_max(),
            spot_check_runs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Plot MSD-like quantities in dB.
    #[serde(default = "default_db")]
    pub db: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Svg]
}

fn default_db() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats(), db: default_db() }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_lambda_points")]
    pub points: usize,
}

fn default_lambda_max() -> f64 {
    1.2
}

fn default_lambda_points() -> usize {
    121
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { lambda_max: default_lambda_max(), points: default_lambda_points() }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Step sizes, in config order.
    pub fn mus(&self) -> CliResult<Vec<f64>> {
        let mus = self.algorithm.mu.as_ref().ok_or_else(|| bad("algorithm.mu is required"))?.values();
        if mus.is_empty() {
            return Err(bad("algorithm.mu is empty"));
        }
        if let Some(mu) = mus.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(bad(format!("algorithm.mu = {mu} must be positive")));
        }
        Ok(mus)
    }

    /// Regularization strengths from exactly one of `eta`, `eta_range`,
    /// `eta_logspace`.
    pub fn etas(&self) -> CliResult<Vec<f64>> {
        let a = &self.algorithm;
        let given = [a.eta.is_some(), a.eta_range.is_some(), a.eta_logspace.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(bad("give exactly one of algorithm.eta, algorithm.eta_range, algorithm.eta_logspace"));
        }
        let etas = if let Some(eta) = &a.eta {
            eta.values()
        } else if let Some([start, stop, step]) = a.eta_range {
            if !(step > 0.0) || !(stop >= start) {
                return Err(bad("algorithm.eta_range needs step > 0 and stop >= start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| start + i as f64 * step).collect()
        } else {
            let [lo, hi, points] = a.eta_logspace.unwrap();
            if !(lo > 0.0 && hi > lo) || points < 2.0 || points.fract() != 0.0 {
                return Err(bad("algorithm.eta_logspace needs 0 < lo < hi and an integer point count >= 2"));
            }
            let n = points as usize;
            let (l0, l1) = (lo.log10(), hi.log10());
            (0..n).map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / (n - 1) as f64)).collect()
        };
        if etas.is_empty() {
            return Err(bad("eta list is empty"));
        }
        if let Some(eta) = etas.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(bad(format!("eta = {eta} must be finite and nonnegative")));
        }
        Ok(etas)
    }

    /// Checks the scalar settings that do not need the graph or ensemble.
    pub fn check_settings(&self) -> CliResult<()> {
        let a = &self.algorithm;
        if a.n_runs == 0 {
            return Err(bad("algorithm.n_runs must be positive"));
        }
        if a.n_iters == Some(0) {
            return Err(bad("algorithm.n_iters must be positive"));
        }
        if !(a.window > 0.0 && a.window <= 1.0) {
            return Err(bad("algorithm.window must lie in (0, 1]"));
        }
        if !(a.slope_eta_max > 0.0) {
            return Err(bad("algorithm.slope_eta_max must be positive"));
        }
        if self.output.formats.is_empty() {
            return Err(bad("output.formats is empty"));
        }
        if !(self.filter.lambda_max > 0.0) || self.filter.points < 2 {
            return Err(bad("filter needs lambda_max > 0 and at least 2 points"));
        }
        Ok(())
    }

    pub fn build_graph(&self, base: &Path) -> CliResult<Graph> {
        match &self.graph {
            GraphSpec::Geometric { nodes, radius, weight, seed } => {
                Ok(random_geometric(*nodes, *radius, *weight, *seed)?)
            }
            GraphSpec::File { path } => {
                let path = base.join(path);
                let text = read(&path)?;
                Ok(build_graph(parse_edge_list(&text)?)?)
            }
        }
    }

    pub fn build_ensemble(&self, g: &Graph, base: &Path) -> CliResult<TaskEnsemble> {
        let spec = &self.ensemble;
        let (n, m) = (g.n_agents(), spec.dim);
        if m == 0 {
            return Err(bad("ensemble.dim must be positive"));
        }
        let targets = match &spec.target {
            TargetSpec::Smooth { tau } => {
                if tau.len() != m {
                    return Err(bad(format!("ensemble.target.tau has {} entries, dim is {m}", tau.len())));
                }
                make_smooth_target(g, tau, m)?
            }
            TargetSpec::Values { values } => rows_to_signal(values, n, m, "ensemble.target.values")?,
            TargetSpec::File { path } => {
                let rows = numeric_rows(&read(&base.join(path))?)?;
                rows_to_signal(&rows, n, m, "target file")?
            }
        };
        let (covs, noise) = match &spec.profile {
            ProfileSpec::Uniform { sigma_u2, covariance, noise_var } => {
                let cov = match (sigma_u2, covariance) {
                    (Some(s), None) => Covariance::scalar(*s)?,
                    (None, Some(c)) => Covariance::full(matrix(c, m, "ensemble.profile.covariance")?)?,
                    _ => return Err(bad("uniform profile needs exactly one of sigma_u2, covariance")),
                };
                (vec![cov; n], vec![*noise_var; n])
            }
            ProfileSpec::Varying { seed, sigma_u2_range, noise_var_range } => {
                for (name, r) in [("sigma_u2_range", sigma_u2_range), ("noise_var_range", noise_var_range)] {
                    if !(r[0] > 0.0 && r[1] >= r[0]) {
                        return Err(bad(format!("ensemble.profile.{name} must satisfy 0 < lo <= hi")));
                    }
                }
                let (su, sv) = varying_profile_in(
                    n,
                    *seed,
                    (sigma_u2_range[0], sigma_u2_range[1]),
                    (noise_var_range[0], noise_var_range[1]),
                );
                (su.into_iter().map(Covariance::scalar).collect::<Result<_, _>>()?, sv)
            }
            ProfileSpec::Scalar { sigma_u2, noise_var } => {
                (sigma_u2.iter().map(|&s| Covariance::scalar(s)).collect::<Result<_, _>>()?, noise_var.clone())
            }
            ProfileSpec::Full { covariances, noise_var } => {
                let covs = covariances
                    .iter()
                    .map(|c| Covariance::full(matrix(c, m, "ensemble.profile.covariances")?).map_err(CliError::from))
                    .collect::<CliResult<_>>()?;
                (covs, noise_var.clone())
            }
            ProfileSpec::File { path } => {
                let rows = numeric_rows(&read(&base.join(path))?)?;
                let mut covs = Vec::with_capacity(rows.len());
                let mut noise = Vec::with_capacity(rows.len());
                for (k, row) in rows.iter().enumerate() {
                    if row.len() != 1 + m * m {
                        return Err(bad(format!(
                            "profile file row {} has {} values, expected {}",
                            k + 1,
                            row.len(),
                            1 + m * m
                        )));
                    }
                    noise.push(row[0]);
                    covs.push(Covariance::full(DMatrix::from_row_slice(m, m, &row[1..]))?);
                }
                (covs, noise)
            }
        };
        if covs.len() != n || noise.len() != n {
            return Err(bad(format!("profile describes {} agents, graph has {n}", covs.len().min(noise.len()))));
        }
        Ok(TaskEnsemble::new(targets, covs, noise)?)
    }
}

impl EnsembleSpec {
    /// Explicit description of an ensemble, suitable for writing back out.
    pub fn from_ensemble(ens: &TaskEnsemble) -> Self {
        let (n, m) = (ens.n_agents(), ens.dim());
        let values = (0..n).map(|k| ens.targets().block(k).to_vec()).collect();
        let all_scalar = (0..n).all(|k| matches!(ens.covariance(k), Covariance::Scalar(_)));
        let profile = if all_scalar {
            let sigma_u2 = (0..n)
                .map(|k| match ens.covariance(k) {
                    Covariance::Scalar(s) => *s,
                    Covariance::Full { .. } => unreachable!(),
                })
                .collect();
            ProfileSpec::Scalar { sigma_u2, noise_var: ens.noise_vars().to_vec() }
        } else {
            let covariances = (0..n)
                .map(|k| {
                    let r = ens.regressor_cov(k);
                    (0..m).map(|i| (0..m).map(|j| r[(i, j)]).collect()).collect()
                })
                .collect();
            ProfileSpec::Full { covariances, noise_var: ens.noise_vars().to_vec() }
        };
        Self { dim: m, target: TargetSpec::Values { values }, profile }
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))
}

fn numeric_rows(text: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("line {}: cannot parse {t:?}", i + 1))))
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_signal(rows: &[Vec<f64>], n: usize, m: usize, what: &str) -> CliResult<StackedSignal> {
    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
        return Err(bad(format!("{what} must be {n} rows of {m} values")));
    }
    Ok(StackedSignal::from_blocks(rows)?)
}

fn matrix(rows: &[Vec<f64>], m: usize, what: &str) -> CliResult<DMatrix<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(bad(format!("{what} must be {m}x{m}")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}
