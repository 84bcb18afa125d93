//! Online multitask diffusion and Monte Carlo averaging.
//!
//! Each iteration every agent adapts with its own stochastic gradient,
//! `psi_k = w_k - mu g_k`, then combines with its neighbours,
//! `w_k = psi_k - mu eta sum_l a_kl (psi_k - psi_l)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{Graph, Neighborhood, StackedSignal};
use crate::regularized::solve_regularized;
use crate::rng::NormalStream;
use crate::tasks::{StochasticCost, TaskEnsemble};

/// Per-iteration errors above this abort the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCondition {
    pub name: &'static str,
    pub description: &'static str,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl StabilityCondition {
    /// `bound - value`; negative when violated.
    pub fn margin(&self) -> f64 {
        self.bound - self.value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub conditions: Vec<StabilityCondition>,
}

impl StabilityVerdict {
    pub fn passes(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn violated(&self) -> Vec<String> {
        self.conditions
            .iter()
            .filter(|c| !c.holds)
            .map(|c| format!("{} ({}: {:e} vs bound {:e})", c.name, c.description, c.value, c.bound))
            .collect()
    }

    pub fn into_result(self) -> Result<()> {
        if self.passes() {
            Ok(())
        } else {
            Err(Error::UnstableConfiguration { violated: self.violated() })
        }
    }
}

/// Checks the step-size / regularization region in which the combination
/// matrix `I - mu eta L` is stable with nonnegative entries and the long-term
/// error recursion is mean stable.
pub fn check_stability(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> StabilityVerdict {
    let hessians: Vec<DMatrix<f64>> = (0..ens.n_agents()).map(|k| ens.regressor_cov(k)).collect();
    stability_from_hessians(&hessians, g, mu, eta)
}

pub fn stability_from_hessians(hessians: &[DMatrix<f64>], g: &Graph, mu: f64, eta: f64) -> StabilityVerdict {
    let mu_eta = mu * eta;
    let lmax = g.lambda_max();
    let spectral_bound = if lmax > 0.0 { 2.0 / lmax } else { f64::INFINITY };
    let positivity_bound =
        (0..g.n_agents()).map(|k| g.degree(k)).filter(|&d| d > 0.0).map(|d| 1.0 / d).fold(f64::INFINITY, f64::min);
    let step_bound = hessians.iter().map(|h| 2.0 / crate::linalg::lambda_max(h)).fold(f64::INFINITY, f64::min);
    let in_range = |v: f64, b: f64| v >= 0.0 && v <= b;
    StabilityVerdict {
        conditions: vec![
            StabilityCondition {
                name: "combination-stability",
                description: "0 <= mu*eta <= 2/lambda_max(L)",
                value: mu_eta,
                bound: spectral_bound,
                holds: in_range(mu_eta, spectral_bound),
            },
            StabilityCondition {
                name: "combination-positivity",
                description: "0 <= mu*eta <= min_k 1/deg_k",
                value: mu_eta,
                bound: positivity_bound,
                holds: in_range(mu_eta, positivity_bound),
            },
            StabilityCondition {
                name: "step-size",
                description: "0 < mu < min_k 2/lambda_max(H_k)",
                value: mu,
                bound: step_bound,
                holds: mu > 0.0 && mu < step_bound,
            },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Stochastic,
    /// Noise-free gradient descent on the regularized cost.
    Exact,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    mu: f64,
    eta: f64,
    pub n_iters: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// Initial `W_0`; zero when absent.
    pub init: Option<StackedSignal>,
    /// Fraction of final iterations averaged for steady-state values.
    pub steady_window_frac: f64,
    pub track_long_term: bool,
    pub gradient: GradientMode,
}

impl SimConfig {
    /// Fails unless `(mu, eta)` is stable for this cost and graph. The
    /// horizon defaults to [`default_horizon`].
    pub fn new(cost: &impl StochasticCost, g: &Graph, mu: f64, eta: f64) -> Result<Self> {
        let hessians = hessians_at_origin(cost);
        stability_from_hessians(&hessians, g, mu, eta).into_result()?;
        let lambda_min = hessians.iter().map(crate::linalg::lambda_min).fold(f64::INFINITY, f64::min);
        Ok(Self {
            mu,
            eta,
            n_iters: horizon(mu, lambda_min),
            n_runs: 1,
            seed: 0,
            init: None,
            steady_window_frac: 0.1,
            track_long_term: false,
            gradient: GradientMode::Stochastic,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn with_iters(mut self, n_iters: usize) -> Self {
        self.n_iters = n_iters;
        self
    }

    pub fn with_runs(mut self, n_runs: usize) -> Self {
        self.n_runs = n_runs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_window(mut self, frac: f64) -> Self {
        self.steady_window_frac = frac;
        self
    }

    pub fn with_long_term(mut self, on: bool) -> Self {
        self.track_long_term = on;
        self
    }

    pub fn with_gradient(mut self, mode: GradientMode) -> Self {
        self.gradient = mode;
        self
    }

    pub fn with_init(mut self, init: StackedSignal) -> Self {
        self.init = Some(init);
        self
    }

    /// Number of trailing iterations in the steady-state average.
    pub fn steady_window(&self) -> usize {
        ((self.steady_window_frac * self.n_iters as f64).ceil() as usize).clamp(1, self.n_iters.max(1))
    }

    fn validate(&self, cost: &impl StochasticCost, g: &Graph) -> Result<()> {
        if cost.n_agents() != g.n_agents() {
            return Err(Error::DimensionMismatch("cost and graph disagree on the agent count".into()));
        }
        if self.n_iters == 0 || self.n_runs == 0 {
            return Err(Error::InvalidParameter("n_iters and n_runs must be positive".into()));
        }
        if !(self.steady_window_frac > 0.0 && self.steady_window_frac <= 1.0) {
            return Err(Error::InvalidParameter("steady_window_frac must lie in (0, 1]".into()));
        }
        if let Some(init) = &self.init {
            if init.n_agents() != cost.n_agents() || init.block_dim() != cost.dim() {
                return Err(Error::DimensionMismatch("initial state has the wrong shape".into()));
            }
        }
        stability_from_hessians(&hessians_at_origin(cost), g, self.mu, self.eta).into_result()
    }
}

fn hessians_at_origin(cost: &impl StochasticCost) -> Vec<DMatrix<f64>> {
    let zero = vec![0.0; cost.dim()];
    (0..cost.n_agents()).map(|k| cost.hessian(k, &zero)).collect()
}

fn horizon(mu: f64, lambda_min: f64) -> usize {
    (30.0 / (mu * lambda_min)).ceil() as usize
}

/// `ceil(30 / (mu min_k lambda_min(R_{u,k})))`: the slowest mode has decayed
/// by `e^-30` before the steady-state window.
pub fn default_horizon(ens: &TaskEnsemble, mu: f64) -> usize {
    horizon(mu, ens.min_regressor_eigenvalue())
}

/// Points the errors are measured against.
#[derive(Debug, Clone)]
pub struct Reference {
    /// `W°_eta`, the limit point of the recursion.
    pub regularized: StackedSignal,
    /// `W°`, the agents' own targets.
    pub target: StackedSignal,
}

impl Reference {
    pub fn for_ensemble(ens: &TaskEnsemble, g: &Graph, eta: f64) -> Result<Self> {
        let reg = solve_regularized(ens, g, eta)?;
        Ok(Self { regularized: reg.solution, target: ens.targets().clone() })
    }
}

/// Combine step: `out_k = psi_k - mu_eta sum_l a_kl (psi_k - psi_l)`, reading
/// only the neighbours of each `k`.
pub fn combine<N: Neighborhood + ?Sized>(nbhd: &N, mu_eta: f64, psi: &[f64], dim: usize, out: &mut [f64]) {
    for k in 0..nbhd.n_nodes() {
        let (lo, hi) = (k * dim, (k + 1) * dim);
        out[lo..hi].copy_from_slice(&psi[lo..hi]);
        for &(l, a) in nbhd.neighbors_of(k) {
            let c = mu_eta * a;
            for j in 0..dim {
                out[lo + j] -= c * (psi[lo + j] - psi[l * dim + j]);
            }
        }
    }
}

/// Per-iteration errors of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(1/N) ||W°_eta - W_i||²` for `i = 1..=n_iters`.
    pub msd_vs_reg: Vec<f64>,
    /// `(1/N) ||W° - W_i||²`.
    pub msd_vs_target: Vec<f64>,
    /// `||(W°_eta - W_i) - W~'_i||²` against the long-term model.
    pub long_term_gap: Option<Vec<f64>>,
}

struct LongTerm {
    state: Vec<f64>,
    next: Vec<f64>,
    drift: Vec<f64>,
    hessians: Vec<DMatrix<f64>>,
    true_grad: Vec<f64>,
}

struct Runner<'a, C: StochasticCost> {
    cost: &'a C,
    graph: &'a Graph,
    mu: f64,
    eta: f64,
    mode: GradientMode,
    dim: usize,
    w: Vec<f64>,
    psi: Vec<f64>,
    grad: Vec<f64>,
    scratch: Vec<f64>,
    streams: Vec<NormalStream>,
    long_term: Option<LongTerm>,
}

impl<'a, C: StochasticCost> Runner<'a, C> {
    fn new(cost: &'a C, g: &'a Graph, cfg: &SimConfig, refs: &Reference, run: usize, long_term: bool) -> Self {
        let (n, dim) = (cost.n_agents(), cost.dim());
        let w = match &cfg.init {
            Some(init) => init.values().to_vec(),
            None => vec![0.0; n * dim],
        };
        // Fresh streams start at iteration 0 and every iteration consumes
        // `draws_per_iteration` normals, so draw i of agent k is always the
        // same number regardless of how runs are scheduled.
        let streams = (0..n).map(|k| NormalStream::new(cfg.seed, run, k)).collect();
        let long_term = long_term.then(|| {
            let reg = &refs.regularized;
            let lw = g.apply_laplacian(&g.apply_laplacian(reg));
            let scale = cfg.mu * cfg.mu * cfg.eta * cfg.eta;
            LongTerm {
                state: reg.values().iter().zip(&w).map(|(a, b)| a - b).collect(),
                next: vec![0.0; n * dim],
                drift: lw.values().iter().map(|x| scale * x).collect(),
                hessians: (0..n).map(|k| cost.hessian(k, reg.block(k))).collect(),
                true_grad: vec![0.0; dim],
            }
        });
        Self {
            cost,
            graph: g,
            mu: cfg.mu,
            eta: cfg.eta,
            mode: cfg.gradient,
            dim,
            w,
            psi: vec![0.0; n * dim],
            grad: vec![0.0; dim],
            scratch: vec![0.0; dim],
            streams,
            long_term,
        }
    }

    fn step(&mut self) {
        let dim = self.dim;
        for k in 0..self.cost.n_agents() {
            let wk = &self.w[k * dim..(k + 1) * dim];
            match self.mode {
                GradientMode::Stochastic => {
                    self.cost.stochastic_gradient(k, wk, &mut self.streams[k], &mut self.scratch, &mut self.grad)
                }
                GradientMode::Exact => self.cost.true_gradient(k, wk, &mut self.grad),
            }
            for ((p, w), g) in self.psi[k * dim..(k + 1) * dim].iter_mut().zip(wk).zip(&self.grad) {
                *p = w - self.mu * g;
            }
            if let Some(lt) = self.long_term.as_mut() {
                // s_k = true gradient - instantaneous gradient, at w_{k,i-1}.
                self.cost.true_gradient(k, wk, &mut lt.true_grad);
                let h = &lt.hessians[k];
                let st = &lt.state[k * dim..(k + 1) * dim];
                for i in 0..dim {
                    let hs: f64 = (0..dim).map(|j| h[(i, j)] * st[j]).sum();
                    let noise = lt.true_grad[i] - self.grad[i];
                    lt.next[k * dim + i] = st[i] - self.mu * hs - self.mu * noise;
                }
            }
        }
        let mu_eta = self.mu * self.eta;
        combine(self.graph, mu_eta, &self.psi, dim, &mut self.w);
        if let Some(lt) = self.long_term.as_mut() {
            combine(self.graph, mu_eta, &lt.next, dim, &mut lt.state);
            for (s, d) in lt.state.iter_mut().zip(&lt.drift) {
                *s += d;
            }
        }
    }
}

/// One realization of the diffusion recursion.
pub fn run_single<C: StochasticCost>(
    cost: &C,
    g: &Graph,
    cfg: &SimConfig,
    refs: &Reference,
    run_index: usize,
) -> Result<Trajectory> {
    cfg.validate(cost, g)?;
    if run_index >= cfg.n_runs {
        return Err(Error::InvalidParameter(format!("run {run_index} >= n_runs {}", cfg.n_runs)));
    }
    run_unchecked(cost, g, cfg, refs, run_index)
}

fn run_unchecked<C: StochasticCost>(
    cost: &C,
    g: &Graph,
    cfg: &SimConfig,
    refs: &Reference,
    run_index: usize,
) -> Result<Trajectory> {
    let n = cost.n_agents() as f64;
    let mut runner = Runner::new(cost, g, cfg, refs, run_index, cfg.track_long_term);
    let mut msd_vs_reg = Vec::with_capacity(cfg.n_iters);
    let mut msd_vs_target = Vec::with_capacity(cfg.n_iters);
    let mut gap = cfg.track_long_term.then(|| Vec::with_capacity(cfg.n_iters));
    for i in 1..=cfg.n_iters {
        runner.step();
        let mut e_reg = 0.0;
        let mut e_tgt = 0.0;
        let mut e_gap = 0.0;
        for (idx, &w) in runner.w.iter().enumerate() {
            let d_reg = refs.regularized.values()[idx] - w;
            let d_tgt = refs.target.values()[idx] - w;
            e_reg += d_reg * d_reg;
            e_tgt += d_tgt * d_tgt;
            if let Some(lt) = &runner.long_term {
                let d = d_reg - lt.state[idx];
                e_gap += d * d;
            }
        }
        let e_reg = e_reg / n;
        if !(e_reg <= DIVERGENCE_THRESHOLD) {
            return Err(Error::NumericalDivergence { run: run_index, iteration: i, error: e_reg });
        }
        msd_vs_reg.push(e_reg);
        msd_vs_target.push(e_tgt / n);
        if let Some(gap) = gap.as_mut() {
            gap.push(e_gap);
        }
    }
    Ok(Trajectory { msd_vs_reg, msd_vs_target, long_term_gap: gap })
}

/// Runs the long-term linear model in lockstep with the diffusion recursion,
/// driven by the same gradient-noise realization. Returns `W~'_i` for
/// `i = 1..=n_iters`.
pub fn run_long_term<C: StochasticCost>(
    cost: &C,
    g: &Graph,
    cfg: &SimConfig,
    refs: &Reference,
    run_index: usize,
) -> Result<Vec<StackedSignal>> {
    cfg.validate(cost, g)?;
    let (n, dim) = (cost.n_agents(), cost.dim());
    let mut runner = Runner::new(cost, g, cfg, refs, run_index, true);
    let mut out = Vec::with_capacity(cfg.n_iters);
    for i in 1..=cfg.n_iters {
        runner.step();
        let lt = runner.long_term.as_ref().unwrap();
        let size = lt.state.iter().map(|x| x * x).sum::<f64>() / n as f64;
        if !(size <= DIVERGENCE_THRESHOLD) {
            return Err(Error::NumericalDivergence { run: run_index, iteration: i, error: size });
        }
        out.push(StackedSignal::new(n, dim, lt.state.clone())?);
    }
    Ok(out)
}

/// Monte Carlo averaged learning curves.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mu: f64,
    pub eta: f64,
    pub curve_vs_reg: Vec<f64>,
    pub curve_vs_target: Vec<f64>,
    pub steady_msd_vs_reg: f64,
    pub steady_msd_vs_target: f64,
    pub long_term_gap: Option<Vec<f64>>,
    pub runs_completed: usize,
    pub steady_window: usize,
}

impl SimResult {
    pub fn n_iters(&self) -> usize {
        self.curve_vs_reg.len()
    }
}

pub fn monte_carlo(ens: &TaskEnsemble, g: &Graph, cfg: &SimConfig) -> Result<SimResult> {
    let refs = Reference::for_ensemble(ens, g, cfg.eta)?;
    monte_carlo_with(ens, g, cfg, &refs)
}

/// Averages `cfg.n_runs` independent runs. Runs are summed along a fixed
/// binary tree over run indices, so the floating-point result does not depend
/// on the thread schedule.
pub fn monte_carlo_with<C: StochasticCost>(
    cost: &C,
    g: &Graph,
    cfg: &SimConfig,
    refs: &Reference,
) -> Result<SimResult> {
    cfg.validate(cost, g)?;
    let total = reduce_runs(cost, g, cfg, refs, 0, cfg.n_runs)?;
    let r = cfg.n_runs as f64;
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x / r).collect::<Vec<_>>();
    let curve_vs_reg = scale(total.msd_vs_reg);
    let curve_vs_target = scale(total.msd_vs_target);
    let long_term_gap = total.long_term_gap.map(scale);
    let window = cfg.steady_window();
    let tail_mean = |v: &[f64]| v[v.len() - window..].iter().sum::<f64>() / window as f64;
    Ok(SimResult {
        mu: cfg.mu,
        eta: cfg.eta,
        steady_msd_vs_reg: tail_mean(&curve_vs_reg),
        steady_msd_vs_target: tail_mean(&curve_vs_target),
        curve_vs_reg,
        curve_vs_target,
        long_term_gap,
        runs_completed: cfg.n_runs,
        steady_window: window,
    })
}

fn reduce_runs<C: StochasticCost>(
    cost: &C,
    g: &Graph,
    cfg: &SimConfig,
    refs: &Reference,
    lo: usize,
    hi: usize,
) -> Result<Trajectory> {
    if hi - lo == 1 {
        return run_unchecked(cost, g, cfg, refs, lo);
    }
    let mid = lo + (hi - lo) / 2;
    let (left, right) =
        rayon::join(|| reduce_runs(cost, g, cfg, refs, lo, mid), || reduce_runs(cost, g, cfg, refs, mid, hi));
    let mut left = left?;
    let right = right?;
    add_into(&mut left.msd_vs_reg, &right.msd_vs_reg);
    add_into(&mut left.msd_vs_target, &right.msd_vs_target);
    if let (Some(a), Some(b)) = (left.long_term_gap.as_mut(), right.long_term_gap.as_ref()) {
        add_into(a, b);
    }
    Ok(left)
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}
