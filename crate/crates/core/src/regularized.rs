//! The regularized network minimizer and what surrounds it.
//!
//! For mean-square-error tasks the minimizer of
//! `sum_k J_k(w_k) + (eta/2) W^T (L (x) I_M) W` solves the SPD system
//! `(H + eta L (x) I_M) W = H W°` with `H = diag{R_{u,k}}`.

use nalgebra::{DMatrix, DVector};

use crate::engine::stability_from_hessians;
use crate::error::{Error, Result};
use crate::graph::{gft, Graph, StackedSignal};
use crate::linalg::{lu_solve_vec, spd_solve_vec};
use crate::tasks::{StochasticCost, TaskEnsemble};

#[derive(Debug, Clone)]
pub struct RegularizedSolution {
    pub eta: f64,
    /// `W°_eta`.
    pub solution: StackedSignal,
    /// `||W°_eta - W°||²`.
    pub mismatch_sq: f64,
    /// GFT blocks of `W°_eta`.
    pub spectral_blocks: StackedSignal,
}

/// `L (x) I_M` as a dense matrix.
pub fn kron_laplacian(g: &Graph, dim: usize) -> DMatrix<f64> {
    g.laplacian().kronecker(&DMatrix::<f64>::identity(dim, dim))
}

fn check_graph(ens: &TaskEnsemble, g: &Graph) -> Result<()> {
    if ens.n_agents() != g.n_agents() {
        return Err(Error::DimensionMismatch(format!(
            "ensemble has {} agents, graph has {} nodes",
            ens.n_agents(),
            g.n_agents()
        )));
    }
    Ok(())
}

pub fn solve_regularized(ens: &TaskEnsemble, g: &Graph, eta: f64) -> Result<RegularizedSolution> {
    check_graph(ens, g)?;
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!("eta = {eta} must be finite and nonnegative")));
    }
    let solution = if eta == 0.0 {
        ens.targets().clone()
    } else {
        let h = ens.block_hessian();
        let system = &h + kron_laplacian(g, ens.dim()) * eta;
        let rhs = &h * ens.targets().to_dvector();
        let x = spd_solve_vec(&system, &rhs)?;
        StackedSignal::new(ens.n_agents(), ens.dim(), x.as_slice().to_vec())?
    };
    let mismatch_sq = solution.distance_sq(ens.targets());
    let spectral_blocks = gft(&solution, g)?;
    Ok(RegularizedSolution { eta, solution, mismatch_sq, spectral_blocks })
}

/// `|| col{grad J_k(w_k)} + eta (L (x) I) W ||` at the given solution.
pub fn optimality_residual(ens: &TaskEnsemble, g: &Graph, sol: &RegularizedSolution) -> f64 {
    let m = ens.dim();
    let penalty = g.apply_laplacian(&sol.solution);
    let mut grad = vec![0.0; m];
    let mut acc = 0.0;
    for k in 0..ens.n_agents() {
        ens.true_gradient(k, sol.solution.block(k), &mut grad);
        for (gj, pj) in grad.iter().zip(penalty.block(k)) {
            let r = gj + sol.eta * pj;
            acc += r * r;
        }
    }
    acc.sqrt()
}

/// Minimizer of the unregularized aggregate cost,
/// `w* = (sum_k R_{u,k})^{-1} sum_k R_{u,k} w°_k`.
pub fn pareto_solution(ens: &TaskEnsemble) -> Result<DVector<f64>> {
    let m = ens.dim();
    let mut lhs = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for k in 0..ens.n_agents() {
        let r = ens.regressor_cov(k);
        rhs += &r * DVector::from_column_slice(ens.targets().block(k));
        lhs += r;
    }
    spd_solve_vec(&lhs, &rhs)
}

/// Low-pass graph filter view under a uniform profile:
/// `wbar°_{m,eta} = (eta lambda_m I + R_u)^{-1} R_u wbar°_m`, per frequency.
pub fn spectral_filter_solution(ens: &TaskEnsemble, g: &Graph, eta: f64) -> Result<StackedSignal> {
    check_graph(ens, g)?;
    let r_u = ens.uniform_covariance()?;
    let input = gft(ens.targets(), g)?;
    let mut out = StackedSignal::zeros(g.n_agents(), ens.dim());
    for (m, &lam) in g.eigenvalues().iter().enumerate() {
        let filtered = filter_block(&r_u, eta, lam, &DVector::from_column_slice(input.block(m)))?;
        out.block_mut(m).copy_from_slice(filtered.as_slice());
    }
    Ok(out)
}

/// Applies the frequency response at graph frequency `lambda` to one block.
pub fn filter_block(r_u: &DMatrix<f64>, eta: f64, lambda: f64, block: &DVector<f64>) -> Result<DVector<f64>> {
    let m = r_u.nrows();
    let system = DMatrix::<f64>::identity(m, m) * (eta * lambda) + r_u;
    spd_solve_vec(&system, &(r_u * block))
}

/// Squared-norm gain `||wbar_{m,eta}||² / ||wbar_m||²` for an input block.
pub fn filter_response(r_u: &DMatrix<f64>, eta: f64, lambda: f64, block: &DVector<f64>) -> Result<f64> {
    let out = filter_block(r_u, eta, lambda, block)?;
    Ok(out.norm_squared() / block.norm_squared())
}

/// Upper bound on the norm gain, `1 / (1 + eta lambda / lambda_max(R_u))`.
pub fn filter_norm_bound(r_u_lambda_max: f64, eta: f64, lambda: f64) -> f64 {
    1.0 / (1.0 + eta * lambda / r_u_lambda_max)
}

#[derive(Debug, Clone)]
pub struct BiasReport {
    pub mu: f64,
    pub eta: f64,
    /// Steady-state mean of `W°_eta - W_i` under the long-term model.
    pub bias_vector: StackedSignal,
    pub bias_sq_norm: f64,
}

/// Steady-state bias `mu² eta² (I - B_eta)^{-1} (L (x) I)² W°_eta`, with
/// `B_eta = (I - mu eta L (x) I)(I - mu H_eta)`.
pub fn long_term_bias(ens: &TaskEnsemble, g: &Graph, mu: f64, eta: f64) -> Result<BiasReport> {
    let reg = solve_regularized(ens, g, eta)?;
    long_term_bias_at(ens, g, &reg, mu)
}

/// [`long_term_bias`] reusing an already computed regularized solution.
pub fn long_term_bias_at(
    cost: &impl StochasticCost,
    g: &Graph,
    reg: &RegularizedSolution,
    mu: f64,
) -> Result<BiasReport> {
    let eta = reg.eta;
    check_stability_for(cost, g, reg, mu)?;
    let (n, m) = (cost.n_agents(), cost.dim());
    if eta == 0.0 {
        let bias_vector = StackedSignal::zeros(n, m);
        return Ok(BiasReport { mu, eta, bias_vector, bias_sq_norm: 0.0 });
    }
    let lk = kron_laplacian(g, m);
    let h = hessian_at(cost, &reg.solution);
    // (I - B)/mu = eta L + H - mu eta L H, formed without cancellation against I.
    let system = &lk * eta + &h - (&lk * &h) * (mu * eta);
    let w_eta = reg.solution.to_dvector();
    let rhs = &lk * (&lk * w_eta) * (mu * eta * eta);
    let x = lu_solve_vec(&system, &rhs)?;
    let bias_vector = StackedSignal::new(n, m, x.as_slice().to_vec())?;
    let bias_sq_norm = bias_vector.norm_sq();
    Ok(BiasReport { mu, eta, bias_vector, bias_sq_norm })
}

/// `diag{ hessian_k(w_k) }` for a stacked point.
pub fn hessian_at(cost: &impl StochasticCost, w: &StackedSignal) -> DMatrix<f64> {
    let (n, m) = (cost.n_agents(), cost.dim());
    let mut h = DMatrix::zeros(n * m, n * m);
    for k in 0..n {
        h.view_mut((k * m, k * m), (m, m)).copy_from(&cost.hessian(k, w.block(k)));
    }
    h
}

fn check_stability_for(cost: &impl StochasticCost, g: &Graph, reg: &RegularizedSolution, mu: f64) -> Result<()> {
    let hessians: Vec<DMatrix<f64>> = (0..cost.n_agents()).map(|k| cost.hessian(k, reg.solution.block(k))).collect();
    stability_from_hessians(&hessians, g, mu, reg.eta).into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::tasks::{scalar_profile, Covariance};

    fn triangle_plus_tail() -> Graph {
        let mut a = DMatrix::zeros(4, 4);
        for &(i, j, w) in &[(0, 1, 0.5), (1, 2, 0.3), (0, 2, 0.2), (2, 3, 0.4)] {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        build_graph(a).unwrap()
    }

    fn ensemble() -> TaskEnsemble {
        let targets =
            StackedSignal::from_blocks(&[vec![1.0, 0.0], vec![0.5, 0.2], vec![-0.3, 0.8], vec![0.1, -1.0]]).unwrap();
        scalar_profile(targets, &[1.0, 0.8, 1.3, 0.9], &[0.1, 0.05, 0.12, 0.2]).unwrap()
    }

    #[test]
    fn zero_eta_returns_targets() {
        let ens = ensemble();
        let sol = solve_regularized(&ens, &triangle_plus_tail(), 0.0).unwrap();
        assert_eq!(&sol.solution, ens.targets());
        assert_eq!(sol.mismatch_sq, 0.0);
    }

    #[test]
    fn solution_is_stationary() {
        let ens = ensemble();
        let g = triangle_plus_tail();
        for eta in [0.1, 2.0, 50.0] {
            let sol = solve_regularized(&ens, &g, eta).unwrap();
            assert!(optimality_residual(&ens, &g, &sol) < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_eta_and_shape() {
        let ens = ensemble();
        let g = triangle_plus_tail();
        assert!(matches!(solve_regularized(&ens, &g, -1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(solve_regularized(&ens, &g, f64::NAN), Err(Error::InvalidParameter(_))));
        let small = build_graph(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(matches!(solve_regularized(&ens, &small, 1.0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn pareto_is_weighted_average_for_scalar_profiles() {
        let ens = ensemble();
        let w = pareto_solution(&ens).unwrap();
        let s = [1.0, 0.8, 1.3, 0.9];
        let total: f64 = s.iter().sum();
        for j in 0..2 {
            let expect: f64 = (0..4).map(|k| s[k] * ens.targets().block(k)[j]).sum::<f64>() / total;
            assert!((w[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn spectral_filter_agrees_with_direct_solve() {
        let g = triangle_plus_tail();
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7]);
        let targets = ensemble().targets().clone();
        let ens = TaskEnsemble::uniform(targets, Covariance::full(r).unwrap(), 0.1).unwrap();
        let sol = solve_regularized(&ens, &g, 3.0).unwrap();
        let filtered = spectral_filter_solution(&ens, &g, 3.0).unwrap();
        assert!(filtered.distance_sq(&sol.spectral_blocks) < 1e-24);
        assert!(matches!(spectral_filter_solution(&ensemble(), &g, 3.0), Err(Error::NonUniformProfile)));
    }

    #[test]
    fn filter_gain_respects_bound() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let lmax = crate::linalg::lambda_max(&r);
        let block = DVector::from_vec(vec![0.3, -1.1]);
        let gain = filter_response(&r, 4.0, 0.7, &block).unwrap();
        let bound = filter_norm_bound(lmax, 4.0, 0.7);
        assert!(gain.sqrt() <= bound + 1e-15);
        assert!((filter_response(&r, 4.0, 0.0, &block).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bias_vanishes_without_coupling_or_roughness() {
        let g = triangle_plus_tail();
        let ens = ensemble();
        assert_eq!(long_term_bias(&ens, &g, 1e-2, 0.0).unwrap().bias_sq_norm, 0.0);

        let flat = StackedSignal::from_blocks(&vec![vec![0.4, -0.2]; 4]).unwrap();
        let ens = ens.with_targets(flat).unwrap();
        assert!(long_term_bias(&ens, &g, 1e-2, 5.0).unwrap().bias_sq_norm < 1e-28);
    }

    #[test]
    fn bias_solves_its_fixed_point() {
        let g = triangle_plus_tail();
        let ens = ensemble();
        let (mu, eta) = (0.05, 3.0);
        let report = long_term_bias(&ens, &g, mu, eta).unwrap();
        let reg = solve_regularized(&ens, &g, eta).unwrap();
        let lk = kron_laplacian(&g, 2);
        let id = DMatrix::<f64>::identity(8, 8);
        let b = (&id - &lk * (mu * eta)) * (&id - ens.block_hessian() * mu);
        let x = report.bias_vector.to_dvector();
        let drift = &lk * (&lk * reg.solution.to_dvector()) * (mu * mu * eta * eta);
        let residual = (&b * &x + drift - &x).norm();
        assert!(residual < 1e-14 * x.norm().max(1e-300) + 1e-18);
    }

    #[test]
    fn bias_rejects_unstable_step() {
        let g = triangle_plus_tail();
        assert!(matches!(long_term_bias(&ensemble(), &g, 10.0, 1.0), Err(Error::UnstableConfiguration { .. })));
    }
}
