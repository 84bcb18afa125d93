use std::path::{Path, PathBuf};

use nalgebra::DVector;
use sha2::{Digest, Sha256};
use smoothnet::engine::{default_horizon, DIVERGENCE_THRESHOLD};
use smoothnet::linalg::jacobi_eigen;
use smoothnet::regularized::{filter_norm_bound, filter_response};
use smoothnet::theory::{msd_theory, optimize_eta};
use smoothnet::{
    check_stability, long_term_bias, monte_carlo, solve_regularized, Graph, SimConfig, SimResult, TaskEnsemble,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{db, num, Metadata, Outputs, Plot, Series, Style, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Theory,
    Simulate,
    BiasScan,
    SweepEta,
    FilterResponse,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Theory => "theory",
            Command::Simulate => "simulate",
            Command::BiasScan => "bias-scan",
            Command::SweepEta => "sweep-eta",
            Command::FilterResponse => "filter-response",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Everything a command needs, built and validated before any output.
struct Experiment {
    cfg: ExperimentConfig,
    graph: Graph,
    ens: TaskEnsemble,
    meta: Metadata,
    outputs: Outputs,
}

impl Experiment {
    fn load(inv: &Invocation) -> CliResult<Self> {
        let text = std::fs::read_to_string(&inv.config)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", inv.config.display())))?;
        let mut cfg = ExperimentConfig::parse(&text)?;
        if let Some(seed) = inv.seed {
            cfg.algorithm.seed = seed;
        }
        cfg.check_settings()?;
        let base = inv.config.parent().unwrap_or(Path::new("."));
        let graph = cfg.build_graph(base)?;
        let ens = cfg.build_ensemble(&graph, base)?;

        let mut meta = Metadata::default();
        meta.push("command", inv.command.name());
        meta.push("config_sha256", hex::encode(Sha256::digest(text.as_bytes())));
        meta.push("seed", cfg.algorithm.seed);
        meta.push("smoothnet_core_version", smoothnet::VERSION);
        meta.push("smoothnet_cli_version", env!("CARGO_PKG_VERSION"));
        meta.push("agents", graph.n_agents());
        meta.push("dim", ens.dim());

        let dir = inv.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        let outputs = Outputs::new(&dir, &cfg.output.formats);
        Ok(Self { cfg, graph, ens, meta, outputs })
    }

    fn y_label(&self, what: &str) -> String {
        if self.cfg.output.db {
            format!("{what} (dB)")
        } else {
            what.to_string()
        }
    }

    fn y(&self, value: f64) -> f64 {
        if self.cfg.output.db {
            db(value).unwrap_or(f64::NAN)
        } else {
            value
        }
    }

    /// Fails with the violated conditions of the first unstable pair.
    fn require_stable(&self, mus: &[f64], etas: &[f64]) -> CliResult<()> {
        for &mu in mus {
            for &eta in etas {
                let verdict = check_stability(&self.ens, &self.graph, mu, eta);
                if !verdict.passes() {
                    return Err(CliError::Unstable(format!(
                        "mu = {mu}, eta = {eta}: {}",
                        verdict.violated().join("; ")
                    )));
                }
            }
        }
        Ok(())
    }

    fn sim_config(&self, mu: f64, eta: f64, runs: usize) -> CliResult<SimConfig> {
        let a = &self.cfg.algorithm;
        let mut cfg =
            SimConfig::new(&self.ens, &self.graph, mu, eta)?.with_runs(runs).with_seed(a.seed).with_window(a.window);
        if let Some(n) = a.n_iters {
            cfg = cfg.with_iters(n);
        }
        Ok(cfg)
    }

    fn sim_meta(&self, cfg: &SimConfig) -> Metadata {
        let mut meta = self.meta.clone();
        let horizon = if self.cfg.algorithm.n_iters.is_some() { "configured" } else { "default" };
        meta.push("n_iters", format!("{} ({horizon})", cfg.n_iters));
        meta.push("default_horizon", default_horizon(&self.ens, cfg.mu()));
        meta.push("n_runs", cfg.n_runs);
        meta.push("steady_window", format!("{} (last {} of iterations)", cfg.steady_window(), cfg.steady_window_frac));
        meta.push("initial_state", "zero");
        meta.push("divergence_threshold", format!("{DIVERGENCE_THRESHOLD:e}"));
        meta
    }
}

fn simulate_one(ens: &TaskEnsemble, g: &Graph, cfg: &SimConfig) -> CliResult<SimResult> {
    monte_carlo(ens, g, cfg).map_err(|e| {
        let e = CliError::from(e);
        match e {
            CliError::Diverged(m) => CliError::Diverged(format!("mu = {}, eta = {}: {m}", cfg.mu(), cfg.eta())),
            other => other,
        }
    })
}

fn tag(mu: f64, eta: f64) -> String {
    format!("mu{}_eta{}", num(mu), num(eta))
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Runs one subcommand end to end and returns the files written.
pub fn run(inv: &Invocation) -> CliResult<Vec<PathBuf>> {
    let mut exp = Experiment::load(inv)?;
    match inv.command {
        Command::Theory => theory(&mut exp)?,
        Command::Simulate => simulate(&mut exp)?,
        Command::BiasScan => bias_scan(&mut exp)?,
        Command::SweepEta => sweep_eta(&mut exp)?,
        Command::FilterResponse => filter(&mut exp)?,
    }
    exp.outputs.write_all()
}

fn theory(exp: &mut Experiment) -> CliResult<()> {
    let (mus, etas) = (exp.cfg.mus()?, exp.cfg.etas()?);
    exp.require_stable(&mus, &etas)?;
    let mut summary = Table::new(&[
        "mu",
        "eta",
        "msd_total",
        "msd_noncoop",
        "msd_bar",
        "mismatch_sq",
        "bias_cross_term",
        "msd_uniform",
    ]);
    let mut per_freq = Table::new(&["mu", "eta", "m", "lambda", "msd_term"]);
    let mut series = Vec::new();
    for &mu in &mus {
        let mut total = Vec::new();
        let mut bar = Vec::new();
        for &eta in &etas {
            let r = msd_theory(&exp.ens, &exp.graph, mu, eta)?;
            summary.push(vec![
                num(mu),
                num(eta),
                num(r.msd_total),
                num(r.msd_noncoop),
                num(r.msd_bar),
                num(r.mismatch_sq),
                num(r.bias_cross_term),
                opt(r.msd_uniform),
            ]);
            for (m, term) in r.msd_per_frequency.iter().enumerate() {
                per_freq.push(vec![
                    num(mu),
                    num(eta),
                    (m + 1).to_string(),
                    num(exp.graph.eigenvalues()[m]),
                    num(*term),
                ]);
            }
            total.push((eta, exp.y(r.msd_total)));
            bar.push((eta, exp.y(r.msd_bar)));
        }
        series.push(Series::new(format!("MSD, mu={mu}"), total, Style::Line));
        series.push(Series::new(format!("MSD bar, mu={mu}"), bar, Style::Dashed));
    }
    let plot = Plot {
        title: "Steady-state MSD".into(),
        x_label: "eta".into(),
        y_label: exp.y_label("MSD"),
        log_x: false,
        series,
    };
    exp.outputs.csv("theory", &summary, &exp.meta);
    exp.outputs.csv("theory_per_frequency", &per_freq, &exp.meta);
    exp.outputs.svg("theory", &plot, &exp.meta);
    Ok(())
}

fn simulate(exp: &mut Experiment) -> CliResult<()> {
    let (mus, etas) = (exp.cfg.mus()?, exp.cfg.etas()?);
    exp.require_stable(&mus, &etas)?;
    let runs = exp.cfg.algorithm.n_runs;
    let mut jobs = Vec::new();
    for &mu in &mus {
        for &eta in &etas {
            let theory = msd_theory(&exp.ens, &exp.graph, mu, eta)?;
            jobs.push((exp.sim_config(mu, eta, runs)?, theory));
        }
    }
    let mut summary = Table::new(&[
        "mu",
        "eta",
        "n_iters",
        "n_runs",
        "steady_msd",
        "theory_msd",
        "gap_db",
        "steady_msd_bar",
        "theory_msd_bar",
        "gap_bar_db",
    ]);
    for (cfg, theory) in &jobs {
        let sim = simulate_one(&exp.ens, &exp.graph, cfg)?;
        let gap = |a: f64, b: f64| opt(db(a).zip(db(b)).map(|(x, y)| x - y));
        summary.push(vec![
            num(cfg.mu()),
            num(cfg.eta()),
            sim.n_iters().to_string(),
            sim.runs_completed.to_string(),
            num(sim.steady_msd_vs_reg),
            num(theory.msd_total),
            gap(sim.steady_msd_vs_reg, theory.msd_total),
            num(sim.steady_msd_vs_target),
            num(theory.msd_bar),
            gap(sim.steady_msd_vs_target, theory.msd_bar),
        ]);

        let meta = exp.sim_meta(cfg).with("mu", cfg.mu()).with("eta", cfg.eta());
        let mut curve = Table::new(&["iteration", "msd", "msd_bar"]);
        for (i, (a, b)) in sim.curve_vs_reg.iter().zip(&sim.curve_vs_target).enumerate() {
            curve.push(vec![(i + 1).to_string(), num(*a), num(*b)]);
        }
        let n = sim.n_iters() as f64;
        let points = |c: &[f64]| c.iter().enumerate().map(|(i, v)| ((i + 1) as f64, exp.y(*v))).collect();
        let flat = |v: f64| vec![(1.0, exp.y(v)), (n, exp.y(v))];
        let plot = Plot {
            title: format!("Learning curves, mu = {}, eta = {}", cfg.mu(), cfg.eta()),
            x_label: "iteration".into(),
            y_label: exp.y_label("MSD"),
            log_x: false,
            series: vec![
                Series::new("simulated MSD", points(&sim.curve_vs_reg), Style::Line),
                Series::new("theory MSD", flat(theory.msd_total), Style::Dashed),
                Series::new("simulated MSD bar", points(&sim.curve_vs_target), Style::Line),
                Series::new("theory MSD bar", flat(theory.msd_bar), Style::Dashed),
            ],
        };
        let name = format!("simulate_{}", tag(cfg.mu(), cfg.eta()));
        exp.outputs.csv(&name, &curve, &meta);
        exp.outputs.svg(&name, &plot, &meta);
    }
    let meta = exp.sim_meta(&jobs[0].0);
    exp.outputs.csv("simulate", &summary, &meta);
    Ok(())
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn bias_scan(exp: &mut Experiment) -> CliResult<()> {
    let (mus, etas) = (exp.cfg.mus()?, exp.cfg.etas()?);
    exp.require_stable(&mus, &etas)?;
    let eta_max = exp.cfg.algorithm.slope_eta_max;
    let mut table = Table::new(&["mu", "eta", "bias_sq_norm", "bias_sq_db"]);
    let mut slopes = Table::new(&["mu", "slope_vs_eta", "fit_points", "fit_eta_max"]);
    let mut grid = vec![vec![0.0; etas.len()]; mus.len()];
    let mut series = Vec::new();
    for (i, &mu) in mus.iter().enumerate() {
        let mut points = Vec::new();
        let (mut fx, mut fy) = (Vec::new(), Vec::new());
        for (j, &eta) in etas.iter().enumerate() {
            let b = long_term_bias(&exp.ens, &exp.graph, mu, eta)?.bias_sq_norm;
            grid[i][j] = b;
            table.push(vec![num(mu), num(eta), num(b), opt(db(b))]);
            points.push((eta, exp.y(b)));
            if eta > 0.0 && eta <= eta_max && b > 0.0 {
                fx.push(eta.log10());
                fy.push(b.log10());
            }
        }
        slopes.push(vec![num(mu), opt(fit_slope(&fx, &fy)), fx.len().to_string(), num(eta_max)]);
        series.push(Series::new(format!("mu={mu}"), points, Style::Line));
    }
    let mut mu_slopes = Table::new(&["eta", "slope_vs_mu", "fit_points"]);
    if mus.len() >= 2 {
        for (j, &eta) in etas.iter().enumerate() {
            let (fx, fy): (Vec<f64>, Vec<f64>) = mus
                .iter()
                .zip(&grid)
                .filter(|(_, row)| row[j] > 0.0)
                .map(|(mu, row)| (mu.log10(), row[j].log10()))
                .unzip();
            mu_slopes.push(vec![num(eta), opt(fit_slope(&fx, &fy)), fx.len().to_string()]);
        }
    }
    let plot = Plot {
        title: "Squared norm of the steady-state bias".into(),
        x_label: "eta".into(),
        y_label: exp.y_label("bias squared norm"),
        log_x: true,
        series,
    };
    exp.outputs.csv("bias", &table, &exp.meta);
    exp.outputs.csv("bias_slopes", &slopes, &exp.meta);
    if !mu_slopes.is_empty() {
        exp.outputs.csv("bias_mu_slopes", &mu_slopes, &exp.meta);
    }
    exp.outputs.svg("bias", &plot, &exp.meta);
    Ok(())
}

fn sweep_eta(exp: &mut Experiment) -> CliResult<()> {
    let (mus, etas) = (exp.cfg.mus()?, exp.cfg.etas()?);
    exp.require_stable(&mus, &etas)?;
    let spot_runs = exp.cfg.algorithm.spot_check_runs;
    let mut curve = Table::new(&["mu", "eta", "msd_bar", "is_optimum"]);
    let mut summary = Table::new(&["mu", "eta_star", "msd_bar_star", "msd_bar_eta0", "gain_db"]);
    let mut spots = Table::new(&["mu", "eta", "theory_msd_bar", "sim_msd_bar", "gap_db"]);
    let mut series = Vec::new();
    let mut sim_jobs = Vec::new();
    for &mu in &mus {
        let sweep = optimize_eta(&exp.ens, &exp.graph, mu, &etas)?;
        let at_zero = sweep.curve.iter().find(|(e, _)| *e == 0.0).map(|p| p.1).unwrap();
        for &(eta, v) in &sweep.curve {
            curve.push(vec![num(mu), num(eta), num(v), u8::from(eta == sweep.eta_star).to_string()]);
        }
        summary.push(vec![
            num(mu),
            num(sweep.eta_star),
            num(sweep.msd_bar_star),
            num(at_zero),
            opt(db(at_zero).zip(db(sweep.msd_bar_star)).map(|(a, b)| a - b)),
        ]);
        series.push(Series::new(
            format!("MSD bar, mu={mu}"),
            sweep.curve.iter().map(|&(e, v)| (e, exp.y(v))).collect(),
            Style::Line,
        ));
        if spot_runs > 0 {
            let mut points = vec![0.0, sweep.eta_star, *etas.last().unwrap()];
            points.dedup();
            for eta in points {
                let theory = sweep.curve.iter().find(|(e, _)| *e == eta).unwrap().1;
                sim_jobs.push((exp.sim_config(mu, eta, spot_runs)?, theory));
            }
        }
    }
    let mut markers = Vec::new();
    for (cfg, theory) in &sim_jobs {
        let sim = simulate_one(&exp.ens, &exp.graph, cfg)?;
        let v = sim.steady_msd_vs_target;
        spots.push(vec![
            num(cfg.mu()),
            num(cfg.eta()),
            num(*theory),
            num(v),
            opt(db(v).zip(db(*theory)).map(|(a, b)| a - b)),
        ]);
        markers.push((cfg.eta(), exp.y(v)));
    }
    if !markers.is_empty() {
        series.push(Series::new("simulated", markers, Style::Markers));
    }
    let plot = Plot {
        title: "MSD relative to the agents' targets".into(),
        x_label: "eta".into(),
        y_label: exp.y_label("MSD bar"),
        log_x: false,
        series,
    };
    exp.outputs.csv("sweep", &curve, &exp.meta);
    exp.outputs.csv("sweep_summary", &summary, &exp.meta);
    if let Some((cfg, _)) = sim_jobs.first() {
        let meta = exp.sim_meta(cfg);
        exp.outputs.csv("sweep_spot_check", &spots, &meta);
    }
    exp.outputs.svg("sweep", &plot, &exp.meta);
    Ok(())
}

fn filter(exp: &mut Experiment) -> CliResult<()> {
    let etas = exp.cfg.etas()?;
    let r_u = exp
        .ens
        .uniform_covariance()
        .map_err(|_| CliError::Config("filter-response needs a uniform regressor profile".into()))?;
    let eig = jacobi_eigen(&r_u);
    let m = r_u.nrows();
    let weakest = DVector::from_column_slice(eig.vectors.column(0).as_slice());
    let strongest = DVector::from_column_slice(eig.vectors.column(m - 1).as_slice());
    let rho_max = eig.values[m - 1];
    let (lmax, points) = (exp.cfg.filter.lambda_max, exp.cfg.filter.points);
    let lambdas: Vec<f64> = (0..points).map(|i| lmax * i as f64 / (points - 1) as f64).collect();

    let mut dense = Table::new(&["eta", "lambda", "ratio_min", "ratio_max", "bound"]);
    let mut spectrum = Table::new(&["eta", "m", "lambda", "target_norm_sq", "filtered_norm_sq", "ratio"]);
    let mut series = Vec::new();
    let target_spec = smoothnet::graph::gft(exp.ens.targets(), &exp.graph)?;
    for &eta in &etas {
        let mut curve = Vec::new();
        for &lambda in &lambdas {
            let lo = filter_response(&r_u, eta, lambda, &weakest)?;
            let hi = filter_response(&r_u, eta, lambda, &strongest)?;
            let bound = filter_norm_bound(rho_max, eta, lambda).powi(2);
            dense.push(vec![num(eta), num(lambda), num(lo.min(hi)), num(lo.max(hi)), num(bound)]);
            curve.push((lambda, hi.max(lo)));
        }
        series.push(Series::new(format!("eta={eta}"), curve, Style::Dashed));
        let reg = solve_regularized(&exp.ens, &exp.graph, eta)?;
        let mut marks = Vec::new();
        for k in 0..exp.graph.n_agents() {
            let before: f64 = target_spec.block(k).iter().map(|x| x * x).sum();
            let after: f64 = reg.spectral_blocks.block(k).iter().map(|x| x * x).sum();
            let ratio = if before > 0.0 { Some(after / before) } else { None };
            let lambda = exp.graph.eigenvalues()[k];
            spectrum.push(vec![num(eta), (k + 1).to_string(), num(lambda), num(before), num(after), opt(ratio)]);
            marks.push((lambda, after));
        }
        series.push(Series::new(format!("spectrum, eta={eta}"), marks, Style::Markers));
    }
    let plot = Plot {
        title: "Graph filter response".into(),
        x_label: "lambda".into(),
        y_label: "squared norm ratio".into(),
        log_x: false,
        series,
    };
    exp.outputs.csv("filter_response", &dense, &exp.meta);
    exp.outputs.csv("filter_spectrum", &spectrum, &exp.meta);
    exp.outputs.svg("filter_response", &plot, &exp.meta);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x: Vec<f64> = (1..6).map(|i| (i as f64).log10()).collect();
        let y: Vec<f64> = x.iter().map(|v| 4.0 * v - 3.0).collect();
        assert!((fit_slope(&x, &y).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(fit_slope(&x[..1], &y[..1]), None);
    }

    #[test]
    fn tags_are_filename_safe() {
        assert_eq!(tag(1e-3, 5.0), "mu0.001_eta5");
    }
}
