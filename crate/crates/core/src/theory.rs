//! Closed-form steady-state predictions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::engine::check_stability;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{jacobi_eigen, spd_solve};
use crate::regularized::{kron_laplacian, long_term_bias_at, pareto_solution, solve_regularized, RegularizedSolution};
use crate::tasks::TaskEnsemble;

/// Gradient-noise covariance of agent `k` at its regularized estimate:
/// `R W R + R Tr(R W) + sigma_v² R` with `W = d d^T`, `d = w°_k - w°_{k,eta}`.
pub fn noise_covariance(ens: &TaskEnsemble, agent: usize, reg: &RegularizedSolution) -> DMatrix<f64> {
    noise_covariance_at(ens, agent, reg.solution.block(agent))
}

/// Gradient-noise covariance of agent `k` evaluated at an arbitrary point.
pub fn noise_covariance_at(ens: &TaskEnsemble, agent: usize, w: &[f64]) -> DMatrix<f64> {
    let r = ens.regressor_cov(agent);
    let target = ens.targets().block(agent);
    let delta = DVector::from_iterator(w.len(), target.iter().zip(w).map(|(a, b)| a - b));
    let rd = &r * &delta;
    let tr = delta.dot(&rd);
    let mut out = &rd * rd.transpose() + &r * (tr + ens.noise_var(agent));
    symmetrize(&mut out);
    out
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub mu: f64,
    pub eta: f64,
    pub msd_total: f64,
    /// One term per graph frequency, in ascending eigenvalue order.
    pub msd_per_frequency: Vec<f64>,
    /// Uniform-Hessian evaluation, present when the profile is uniform.
    pub msd_uniform: Option<f64>,
    pub msd_noncoop: f64,
    pub msd_bar: f64,
    pub mismatch_sq: f64,
    /// `(2/N) (W° - W°_eta)^T W~'_inf`.
    pub bias_cross_term: f64,
}

impl TheoryReport {
    pub fn compute(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> Result<Self> {
        msd_theory(ens, g, mu, eta)
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("step size must be positive, got {mu}")))
    }
}

/// Full steady-state report at `(mu, eta)`.
pub fn msd_theory(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> Result<TheoryReport> {
    check_stability(ens, g, mu, eta).into_result()?;
    let reg = solve_regularized(ens, g, eta)?;
    let n = ens.n_agents() as f64;
    let msd_per_frequency = frequency_terms(ens, g, mu, &reg)?;
    let msd_total = msd_per_frequency.iter().sum();
    let msd_uniform = if ens.is_uniform() { Some(uniform_sum(ens, g, mu, &reg)?) } else { None };
    let bias = long_term_bias_at(ens, g, &reg, mu)?;
    let gap = ens.targets().sub(&reg.solution);
    let bias_cross_term = 2.0 / n * gap.dot(&bias.bias_vector);
    let mismatch_sq = reg.mismatch_sq;
    Ok(TheoryReport {
        mu,
        eta,
        msd_total,
        msd_per_frequency,
        msd_uniform,
        msd_noncoop: msd_noncoop(ens, mu)?,
        msd_bar: msd_total + mismatch_sq / n + bias_cross_term,
        mismatch_sq,
        bias_cross_term,
    })
}

/// `(mu/2N) Tr((sum_k v_mk² H_k + eta lambda_m I)^{-1} sum_k v_mk² R_{s,k})`
/// for every frequency `m`.
fn frequency_terms(ens: &TaskEnsemble, g: &Graph, mu: f64, reg: &RegularizedSolution) -> Result<Vec<f64>> {
    let (n, dim) = (ens.n_agents(), ens.dim());
    let v = g.eigenvectors();
    let hessians: Vec<DMatrix<f64>> = (0..n).map(|k| ens.regressor_cov(k)).collect();
    let noise: Vec<DMatrix<f64>> = (0..n).map(|k| noise_covariance(ens, k, reg)).collect();
    let scale = mu / (2.0 * n as f64);
    g.eigenvalues()
        .iter()
        .enumerate()
        .map(|(m, &lambda)| {
            let mut a = DMatrix::<f64>::identity(dim, dim) * (reg.eta * lambda);
            let mut b = DMatrix::<f64>::zeros(dim, dim);
            for k in 0..n {
                let w = v[(k, m)] * v[(k, m)];
                a += &hessians[k] * w;
                b += &noise[k] * w;
            }
            Ok(scale * spd_solve(&a, &b)?.trace())
        })
        .collect()
}

fn uniform_sum(ens: &TaskEnsemble, g: &Graph, mu: f64, reg: &RegularizedSolution) -> Result<f64> {
    Ok(uniform_terms(ens, g, mu, reg)?.iter().sum())
}

/// Per-frequency terms under a uniform Hessian, evaluated in the eigenbasis
/// of `R_u`: `sum_q q_q^T B_m q_q / (lambda_q(R_u) + eta lambda_m)`.
fn uniform_terms(ens: &TaskEnsemble, g: &Graph, mu: f64, reg: &RegularizedSolution) -> Result<Vec<f64>> {
    let r_u = ens.uniform_covariance()?;
    let eig = jacobi_eigen(&r_u);
    let n = ens.n_agents();
    let v = g.eigenvectors();
    let noise: Vec<DMatrix<f64>> = (0..n).map(|k| noise_covariance(ens, k, reg)).collect();
    let scale = mu / (2.0 * n as f64);
    Ok(g.eigenvalues()
        .iter()
        .enumerate()
        .map(|(m, &lambda)| {
            let mut b = DMatrix::<f64>::zeros(ens.dim(), ens.dim());
            for k in 0..n {
                b += &noise[k] * (v[(k, m)] * v[(k, m)]);
            }
            let mut t = 0.0;
            for (q, &rq) in eig.values.iter().enumerate() {
                let col = eig.vectors.column(q);
                t += (col.transpose() * &b * col)[(0, 0)] / (rq + reg.eta * lambda);
            }
            scale * t
        })
        .collect())
}

/// Network MSD for a uniform regressor profile.
pub fn msd_uniform(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> Result<f64> {
    ens.uniform_covariance()?;
    check_stability(ens, g, mu, eta).into_result()?;
    let reg = solve_regularized(ens, g, eta)?;
    uniform_sum(ens, g, mu, &reg)
}

/// `(mu/2N) sigma² sum_q 1 / (1 + eta lambda / lambda_q(R_u))`: the
/// per-frequency MSD when the regularization mismatch is neglected.
pub fn msd_lambda_term(mu: f64, n_agents: usize, noise_var: f64, eta: f64, lambda: f64, r_u_eigs: &[f64]) -> f64 {
    let s: f64 = r_u_eigs.iter().map(|&rq| 1.0 / (1.0 + eta * lambda / rq)).sum();
    mu / (2.0 * n_agents as f64) * noise_var * s
}

/// [`msd_lambda_term`] at every graph frequency, with the noise variance of
/// frequency `m` taken as `sum_k v_mk² sigma²_{v,k}`.
pub fn msd_lambda_approx(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> Result<Vec<f64>> {
    check_mu(mu)?;
    let r_u = ens.uniform_covariance()?;
    let eigs = jacobi_eigen(&r_u).values;
    let n = ens.n_agents();
    let v = g.eigenvectors();
    Ok(g.eigenvalues()
        .iter()
        .enumerate()
        .map(|(m, &lambda)| {
            let s2: f64 = (0..n).map(|k| v[(k, m)] * v[(k, m)] * ens.noise_var(k)).sum();
            msd_lambda_term(mu, n, s2, eta, lambda, &eigs)
        })
        .collect())
}

/// Non-cooperative MSD, `(mu/2N) sum_k Tr(H_k^{-1} R_{s,k})` at each agent's own
/// target, which reduces to `(mu/2N) sum_k M sigma²_{v,k}`.
pub fn msd_noncoop(ens: &TaskEnsemble, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let n = ens.n_agents() as f64;
    let m = ens.dim() as f64;
    Ok(mu / (2.0 * n) * ens.noise_vars().iter().map(|s| m * s).sum::<f64>())
}

/// Single-task diffusion MSD around the Pareto solution,
/// `(mu/2N) Tr((sum_k H_k)^{-1} sum_k R_{s,k}(w*))`.
pub fn msd_single_task(ens: &TaskEnsemble, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let w_star = pareto_solution(ens)?;
    let dim = ens.dim();
    let mut h = DMatrix::zeros(dim, dim);
    let mut s = DMatrix::zeros(dim, dim);
    for k in 0..ens.n_agents() {
        h += ens.regressor_cov(k);
        s += noise_covariance_at(ens, k, w_star.as_slice());
    }
    Ok(mu / (2.0 * ens.n_agents() as f64) * spd_solve(&h, &s)?.trace())
}

/// MSD relative to the agents' own targets.
pub fn msd_bar(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> Result<f64> {
    Ok(msd_theory(ens, g, mu, eta)?.msd_bar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSweep {
    pub eta_star: f64,
    pub msd_bar_star: f64,
    /// `(eta, msd_bar)` for every grid point.
    pub curve: Vec<(f64, f64)>,
}

/// Grid search for the `eta` minimizing [`msd_bar`]. The grid must be
/// ascending and contain 0; ties resolve to the smallest `eta`.
pub fn optimize_eta(ens: &TaskEnsemble, g: &Graph, mu: f64, grid: &[f64]) -> Result<EtaSweep> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("eta grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("eta grid must be strictly ascending".into()));
    }
    if !grid.contains(&0.0) {
        return Err(Error::InvalidParameter("eta grid must contain 0".into()));
    }
    let values: Vec<Result<f64>> = grid.par_iter().map(|&eta| msd_bar(ens, g, mu, eta)).collect();
    let mut curve = Vec::with_capacity(grid.len());
    for (&eta, value) in grid.iter().zip(values) {
        let value = value.map_err(|e| match e {
            Error::UnstableConfiguration { violated } => Error::UnstableConfiguration {
                violated: violated.into_iter().map(|v| format!("eta = {eta}: {v}")).collect(),
            },
            other => other,
        })?;
        curve.push((eta, value));
    }
    let (eta_star, msd_bar_star) =
        curve.iter().copied().fold((f64::NAN, f64::INFINITY), |best, p| if p.1 < best.1 { p } else { best });
    Ok(EtaSweep { eta_star, msd_bar_star, curve })
}

/// Reference MSD from the full error-covariance series
/// `(1/N) Tr sum_n B^n Y (B^n)^T`, `B = (I - mu eta L)(I - mu H)`,
/// `Y = mu² (I - mu eta L) S (I - mu eta L)`, summed by repeated squaring
/// until the increment falls below `1e-14` of the total. Dense in `N M`.
pub fn msd_lyapunov_series(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> Result<f64> {
    check_stability(ens, g, mu, eta).into_result()?;
    let reg = solve_regularized(ens, g, eta)?;
    let (n, dim) = (ens.n_agents(), ens.dim());
    let size = n * dim;
    let id = DMatrix::<f64>::identity(size, size);
    let combiner = &id - kron_laplacian(g, dim) * (mu * eta);
    let mut h = DMatrix::zeros(size, size);
    let mut s = DMatrix::zeros(size, size);
    for k in 0..n {
        h.view_mut((k * dim, k * dim), (dim, dim)).copy_from(&ens.regressor_cov(k));
        s.view_mut((k * dim, k * dim), (dim, dim)).copy_from(&noise_covariance(ens, k, &reg));
    }
    let mut a = &combiner * (&id - h * mu);
    let mut x = &combiner * s * &combiner * (mu * mu);
    for _ in 0..200 {
        let inc = &a * &x * a.transpose();
        let (t_inc, t_x) = (inc.trace(), x.trace());
        x += inc;
        if t_inc <= 1e-14 * t_x {
            return Ok(x.trace() / n as f64);
        }
        a = &a * &a;
    }
    Err(Error::InvalidParameter("covariance series did not converge".into()))
}
