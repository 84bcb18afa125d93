#![allow(dead_code)]

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smoothnet::graph::{build_graph, random_geometric, Graph, StackedSignal};
use smoothnet::rng::unit_open;
use smoothnet::tasks::{Covariance, TaskEnsemble};

pub struct Draw(ChaCha8Rng);

impl Draw {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * unit_open(self.0.next_u64())
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
}

/// The 15-node geometric graph used by the experiment configs.
pub fn reference_graph() -> Graph {
    random_geometric(15, 0.5, 0.07, 42).unwrap()
}

/// Connected weighted graph: a random spanning tree plus extra edges.
pub fn random_graph(n: usize, density: f64, d: &mut Draw) -> Graph {
    let mut a = DMatrix::zeros(n, n);
    for k in 1..n {
        let parent = d.index(k);
        let w = d.uniform(0.05, 0.5);
        a[(k, parent)] = w;
        a[(parent, k)] = w;
    }
    for i in 0..n {
        for j in i + 1..n {
            if a[(i, j)] == 0.0 && d.uniform(0.0, 1.0) < density {
                let w = d.uniform(0.05, 0.5);
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    build_graph(a).unwrap()
}

pub fn random_signal(n: usize, m: usize, d: &mut Draw) -> StackedSignal {
    StackedSignal::new(n, m, (0..n * m).map(|_| d.uniform(-1.0, 1.0)).collect()).unwrap()
}

pub fn random_spd(m: usize, d: &mut Draw) -> DMatrix<f64> {
    let b = DMatrix::from_fn(m, m, |_, _| d.uniform(-0.5, 0.5));
    &b * b.transpose() + DMatrix::identity(m, m) * d.uniform(0.5, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    /// One full covariance shared by every agent, heterogeneous noise.
    Uniform,
    /// `sigma²_{u,k} I` with per-agent variances, heterogeneous noise.
    Scalar,
    /// Per-agent scalar covariances, one noise variance for everybody.
    ScalarEqualNoise,
    /// Independent full covariance per agent.
    Full,
}

pub fn random_ensemble(n: usize, m: usize, profile: Profile, d: &mut Draw) -> TaskEnsemble {
    let targets = random_signal(n, m, d);
    let shared_noise = d.uniform(0.05, 0.2);
    let noise: Vec<f64> = (0..n)
        .map(|_| if profile == Profile::ScalarEqualNoise { shared_noise } else { d.uniform(0.05, 0.2) })
        .collect();
    let covs = match profile {
        Profile::Uniform => {
            let c = Covariance::full(random_spd(m, d)).unwrap();
            vec![c; n]
        }
        Profile::Scalar | Profile::ScalarEqualNoise => {
            (0..n).map(|_| Covariance::scalar(d.uniform(0.6, 1.4)).unwrap()).collect()
        }
        Profile::Full => (0..n).map(|_| Covariance::full(random_spd(m, d)).unwrap()).collect(),
    };
    TaskEnsemble::new(targets, covs, noise).unwrap()
}

/// Eigenvalues of a small symmetric matrix as the roots of `det(A - x I)`,
/// bracketed on a fine grid and refined by bisection.
pub fn char_poly_roots(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let p = |x: f64| (a - DMatrix::identity(n, n) * x).determinant();
    let bound = (0..n).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max) + 0.5;
    let steps = 40_000;
    let h = 2.0 * bound / steps as f64;
    let mut roots = Vec::new();
    let mut x0 = -bound;
    let mut p0 = p(x0);
    for i in 1..=steps {
        let x1 = -bound + i as f64 * h;
        let p1 = p(x1);
        if p0 == 0.0 {
            roots.push(x0);
        } else if p0 * p1 < 0.0 {
            let (mut lo, mut hi, mut plo) = (x0, x1, p0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let pm = p(mid);
                if pm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if plo * pm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    plo = pm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        p0 = p1;
    }
    roots
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Minimizes the regularized cost by plain gradient descent with a fixed step
/// below `2 / L`, until the gradient norm drops under `tol`.
pub fn gradient_descent_oracle(ens: &TaskEnsemble, g: &Graph, eta: f64, tol: f64) -> Vec<f64> {
    let (n, m) = (ens.n_agents(), ens.dim());
    let covs: Vec<DMatrix<f64>> = (0..n).map(|k| ens.regressor_cov(k)).collect();
    let lip = covs.iter().map(|c| c.norm()).fold(0.0, f64::max) + eta * 2.0 * g.max_degree();
    let step = 1.0 / lip;
    let mut w = vec![0.0; n * m];
    let mut grad = vec![0.0; n * m];
    let nbrs: Vec<Vec<(usize, f64)>> = (0..n).map(|k| neighbors(g, k)).collect();
    for _ in 0..10_000_000 {
        for k in 0..n {
            for i in 0..m {
                let mut gi = 0.0;
                for j in 0..m {
                    gi += covs[k][(i, j)] * (w[k * m + j] - ens.targets().block(k)[j]);
                }
                for &(l, a) in &nbrs[k] {
                    gi += eta * a * (w[k * m + i] - w[l * m + i]);
                }
                grad[k * m + i] = gi;
            }
        }
        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < tol {
            return w;
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= step * gi;
        }
    }
    panic!("gradient descent did not converge");
}

fn neighbors(g: &Graph, k: usize) -> Vec<(usize, f64)> {
    let a = g.adjacency();
    (0..a.ncols()).filter(|&l| l != k && a[(k, l)] > 0.0).map(|l| (l, a[(k, l)])).collect()
}
