//! Per-agent linear-regression tasks and their streaming data.
//!
//! Agent `k` observes `d = u w°_k + v` with Gaussian regressor `u ~ N(0, R_k)`
//! and noise `v ~ N(0, sigma²_k)`, and minimizes `J_k(w) = E|d - u w|² / 2`.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{igft, Graph, StackedSignal};
use crate::linalg::jacobi_eigen;
use crate::rng::{unit_open, NormalStream};

/// Regressor covariance `R_{u,k}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `sigma² I`.
    Scalar(f64),
    /// Full SPD matrix with its cached lower Cholesky factor.
    Full { matrix: DMatrix<f64>, factor: DMatrix<f64> },
}

impl Covariance {
    pub fn scalar(variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidParameter(format!("regressor variance {variance} must be positive")));
        }
        Ok(Self::Scalar(variance))
    }

    pub fn full(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch("covariance must be square".into()));
        }
        if (&matrix - matrix.transpose()).amax() > 1e-12 * matrix.amax().max(1.0) {
            return Err(Error::InvalidParameter("covariance must be symmetric".into()));
        }
        let factor = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("covariance is not positive definite".into()))?
            .l();
        Ok(Self::Full { matrix, factor })
    }

    pub fn matrix(&self, dim: usize) -> DMatrix<f64> {
        match self {
            Self::Scalar(s) => DMatrix::identity(dim, dim) * *s,
            Self::Full { matrix, .. } => matrix.clone(),
        }
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self, dim: usize) -> Vec<f64> {
        match self {
            Self::Scalar(s) => vec![*s; dim],
            Self::Full { matrix, .. } => jacobi_eigen(matrix).values,
        }
    }

    pub fn lambda_max(&self, dim: usize) -> f64 {
        *self.eigenvalues(dim).last().unwrap()
    }

    pub fn lambda_min(&self, dim: usize) -> f64 {
        self.eigenvalues(dim)[0]
    }

    /// `out = R (x - y)`.
    #[inline]
    pub fn apply_diff(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            Self::Scalar(s) => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = s * (a - b);
                }
            }
            Self::Full { matrix, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|j| matrix[(i, j)] * (x[j] - y[j])).sum();
                }
            }
        }
    }

    /// Fills `out` with a draw from `N(0, R)`; consumes `out.len()` normals.
    #[inline]
    pub fn sample_into(&self, stream: &mut NormalStream, out: &mut [f64]) {
        match self {
            Self::Scalar(s) => {
                let sd = s.sqrt();
                for o in out.iter_mut() {
                    *o = sd * stream.next_normal();
                }
            }
            Self::Full { factor, .. } => {
                for o in out.iter_mut() {
                    *o = stream.next_normal();
                }
                // u = L z, in place from the bottom row up.
                for i in (0..out.len()).rev() {
                    out[i] = (0..=i).map(|j| factor[(i, j)] * out[j]).sum();
                }
            }
        }
    }
}

/// Collection of MSE tasks, one per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEnsemble {
    targets: StackedSignal,
    regressor: Vec<Covariance>,
    noise_var: Vec<f64>,
}

impl TaskEnsemble {
    pub fn new(targets: StackedSignal, regressor: Vec<Covariance>, noise_var: Vec<f64>) -> Result<Self> {
        let n = targets.n_agents();
        let m = targets.block_dim();
        if m == 0 || n == 0 {
            return Err(Error::DimensionMismatch("empty ensemble".into()));
        }
        if regressor.len() != n || noise_var.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} targets, {} covariances, {} noise variances",
                regressor.len(),
                noise_var.len()
            )));
        }
        for (k, cov) in regressor.iter().enumerate() {
            match cov {
                Covariance::Scalar(s) if !(*s > 0.0) => return Err(Error::NotPositiveDefinite { agent: k }),
                Covariance::Full { matrix, .. } if matrix.nrows() != m => {
                    return Err(Error::DimensionMismatch(format!("covariance of agent {k} is not {m}x{m}")))
                }
                _ => {}
            }
        }
        if let Some(k) = noise_var.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance of agent {k} must be positive")));
        }
        Ok(Self { targets, regressor, noise_var })
    }

    /// Every agent gets `R_{u,k} = cov` and the same noise variance.
    pub fn uniform(targets: StackedSignal, cov: Covariance, noise_var: f64) -> Result<Self> {
        let n = targets.n_agents();
        Self::new(targets, vec![cov; n], vec![noise_var; n])
    }

    pub fn n_agents(&self) -> usize {
        self.targets.n_agents()
    }

    pub fn dim(&self) -> usize {
        self.targets.block_dim()
    }

    pub fn targets(&self) -> &StackedSignal {
        &self.targets
    }

    pub fn covariance(&self, k: usize) -> &Covariance {
        &self.regressor[k]
    }

    pub fn regressor_cov(&self, k: usize) -> DMatrix<f64> {
        self.regressor[k].matrix(self.dim())
    }

    pub fn noise_var(&self, k: usize) -> f64 {
        self.noise_var[k]
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_var
    }

    /// Block diagonal `diag{R_{u,k}}` as a dense `NM x NM` matrix.
    pub fn block_hessian(&self) -> DMatrix<f64> {
        let (n, m) = (self.n_agents(), self.dim());
        let mut h = DMatrix::zeros(n * m, n * m);
        for k in 0..n {
            h.view_mut((k * m, k * m), (m, m)).copy_from(&self.regressor_cov(k));
        }
        h
    }

    pub fn is_uniform(&self) -> bool {
        self.regressor.windows(2).all(|w| w[0] == w[1])
    }

    /// The common `R_u` when the profile is uniform.
    pub fn uniform_covariance(&self) -> Result<DMatrix<f64>> {
        if self.is_uniform() {
            Ok(self.regressor_cov(0))
        } else {
            Err(Error::NonUniformProfile)
        }
    }

    pub fn min_regressor_eigenvalue(&self) -> f64 {
        self.regressor.iter().map(|c| c.lambda_min(self.dim())).fold(f64::INFINITY, f64::min)
    }

    /// Replaces the targets, keeping the data profile.
    pub fn with_targets(&self, targets: StackedSignal) -> Result<Self> {
        Self::new(targets, self.regressor.clone(), self.noise_var.clone())
    }
}

/// One streaming observation `(u_{k,i}, d_k(i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub agent: usize,
    pub regressor: Vec<f64>,
    pub observation: f64,
}

/// Draws the next sample of agent `agent`: `dim + 1` normals from `stream`.
pub fn sample(ens: &TaskEnsemble, agent: usize, stream: &mut NormalStream) -> DataSample {
    let mut u = vec![0.0; ens.dim()];
    let observation = sample_into(ens, agent, stream, &mut u);
    DataSample { agent, regressor: u, observation }
}

#[inline]
fn sample_into(ens: &TaskEnsemble, agent: usize, stream: &mut NormalStream, u: &mut [f64]) -> f64 {
    ens.regressor[agent].sample_into(stream, u);
    let v = ens.noise_var[agent].sqrt() * stream.next_normal();
    dot(u, ens.targets.block(agent)) + v
}

/// Instantaneous gradient of `|d - u w|² / 2`, namely `-u^T (d - u w)`.
pub fn stochastic_gradient(ens: &TaskEnsemble, agent: usize, w: &[f64], s: &DataSample) -> Result<Vec<f64>> {
    if s.agent != agent {
        return Err(Error::InvalidParameter(format!("sample of agent {} used for agent {agent}", s.agent)));
    }
    if w.len() != ens.dim() {
        return Err(Error::DimensionMismatch(format!("w has length {}, expected {}", w.len(), ens.dim())));
    }
    let err = s.observation - dot(&s.regressor, w);
    Ok(s.regressor.iter().map(|u| -u * err).collect())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Source of true and instantaneous gradients for the diffusion engine.
///
/// The engine only sees costs through this trait; [`TaskEnsemble`] is the
/// built-in mean-square-error implementation.
pub trait StochasticCost: Sync {
    fn n_agents(&self) -> usize;
    fn dim(&self) -> usize;
    /// Normals consumed per agent per iteration.
    fn draws_per_iteration(&self) -> u64;
    fn true_gradient(&self, agent: usize, w: &[f64], out: &mut [f64]);
    /// Writes the instantaneous gradient; `scratch` has length `dim()`.
    fn stochastic_gradient(
        &self,
        agent: usize,
        w: &[f64],
        stream: &mut NormalStream,
        scratch: &mut [f64],
        out: &mut [f64],
    );
    fn hessian(&self, agent: usize, w: &[f64]) -> DMatrix<f64>;
}

impl StochasticCost for TaskEnsemble {
    fn n_agents(&self) -> usize {
        TaskEnsemble::n_agents(self)
    }

    fn dim(&self) -> usize {
        TaskEnsemble::dim(self)
    }

    fn draws_per_iteration(&self) -> u64 {
        self.dim() as u64 + 1
    }

    #[inline]
    fn true_gradient(&self, agent: usize, w: &[f64], out: &mut [f64]) {
        self.regressor[agent].apply_diff(w, self.targets.block(agent), out);
    }

    #[inline]
    fn stochastic_gradient(
        &self,
        agent: usize,
        w: &[f64],
        stream: &mut NormalStream,
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        let d = sample_into(self, agent, stream, scratch);
        let err = d - dot(scratch, w);
        for (o, u) in out.iter_mut().zip(scratch.iter()) {
            *o = -u * err;
        }
    }

    fn hessian(&self, agent: usize, _w: &[f64]) -> DMatrix<f64> {
        self.regressor_cov(agent)
    }
}

/// Smooth target `W° = (V (x) I_M) col{wbar_m}` with
/// `wbar_m = col{exp(-tau_j lambda_m)}_j / sqrt(M)`.
pub fn make_smooth_target(g: &Graph, tau: &[f64], dim: usize) -> Result<StackedSignal> {
    if tau.len() != dim {
        return Err(Error::DimensionMismatch(format!("{} decay rates for dimension {dim}", tau.len())));
    }
    if tau.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidParameter("decay rates must be nonnegative".into()));
    }
    let spectrum = smooth_spectrum(g, tau);
    igft(&spectrum, g)
}

/// Spectral blocks of [`make_smooth_target`].
pub fn smooth_spectrum(g: &Graph, tau: &[f64]) -> StackedSignal {
    let dim = tau.len();
    let scale = 1.0 / (dim as f64).sqrt();
    let blocks: Vec<Vec<f64>> =
        g.eigenvalues().iter().map(|&lam| tau.iter().map(|t| scale * (-t * lam).exp()).collect()).collect();
    StackedSignal::from_blocks(&blocks).expect("equal block sizes")
}

/// Per-agent variance profile drawn uniformly: regressor variances in
/// `[0.8, 1.2]`, noise variances in `[0.05, 0.15]`.
pub fn varying_profile(n_agents: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    varying_profile_in(n_agents, seed, (0.8, 1.2), (0.05, 0.15))
}

/// [`varying_profile`] with explicit ranges. Both vectors come from the same
/// stream, regressor variances first.
pub fn varying_profile_in(
    n_agents: usize,
    seed: u64,
    sigma_u2: (f64, f64),
    noise_var: (f64, f64),
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * unit_open(rng.next_u64());
    let su = (0..n_agents).map(|_| draw(sigma_u2)).collect();
    let sv = (0..n_agents).map(|_| draw(noise_var)).collect();
    (su, sv)
}

/// Scalar-profile ensemble `R_{u,k} = sigma²_{u,k} I`.
pub fn scalar_profile(targets: StackedSignal, sigma_u2: &[f64], noise_var: &[f64]) -> Result<TaskEnsemble> {
    let covs = sigma_u2.iter().map(|&s| Covariance::scalar(s)).collect::<Result<Vec<_>>>()?;
    TaskEnsemble::new(targets, covs, noise_var.to_vec())
}

/// `sum_k R_{u,k} (w - w°_k)` as a vector; zero at the Pareto solution.
pub fn aggregate_gradient(ens: &TaskEnsemble, w: &DVector<f64>) -> DVector<f64> {
    let m = ens.dim();
    let mut acc = DVector::zeros(m);
    let mut out = vec![0.0; m];
    for k in 0..ens.n_agents() {
        ens.true_gradient(k, w.as_slice(), &mut out);
        acc += DVector::from_column_slice(&out);
    }
    acc
}
