//! Weighted undirected graphs, their Laplacian spectra, and graph signals.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::rng::unit_open;

/// `lambda_2` must exceed this for the graph to count as connected.
pub const CONNECTIVITY_TOLERANCE: f64 = 1e-9;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Connected weighted graph with its Laplacian `L = D - A` and the full
/// eigendecomposition `L = V diag(lambda) V^T`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

/// Read access to the weighted neighbourhoods of a graph.
///
/// The diffusion combine step only goes through this trait, so a wrapper can
/// observe exactly which nodes an update touches.
pub trait Neighborhood {
    fn n_nodes(&self) -> usize;
    fn neighbors_of(&self, k: usize) -> &[(usize, f64)];
}

impl Neighborhood for Graph {
    fn n_nodes(&self) -> usize {
        self.n_agents()
    }

    fn neighbors_of(&self, k: usize) -> &[(usize, f64)] {
        &self.neighbors[k]
    }
}

/// Builds a [`Graph`] from a symmetric, nonnegative, zero-diagonal adjacency.
pub fn build_graph(adjacency: DMatrix<f64>) -> Result<Graph> {
    let (rows, cols) = adjacency.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let n = rows;
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    for i in 0..n {
        if adjacency[(i, i)] != 0.0 {
            return Err(Error::NonzeroDiagonal { node: i });
        }
        for j in 0..n {
            let a = adjacency[(i, j)];
            if !(a >= 0.0) {
                return Err(Error::NegativeWeight { row: i, col: j, weight: a });
            }
            if (a - adjacency[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    // Exact symmetry from here on.
    let adjacency = (&adjacency + adjacency.transpose()) * 0.5;

    let mut laplacian = -adjacency.clone();
    for i in 0..n {
        laplacian[(i, i)] = adjacency.row(i).sum();
    }
    let eig = jacobi_eigen(&laplacian);
    if n > 1 && eig.values[1] <= CONNECTIVITY_TOLERANCE {
        return Err(Error::Disconnected { lambda2: eig.values[1] });
    }

    let neighbors =
        (0..n).map(|k| (0..n).filter(|&l| adjacency[(k, l)] > 0.0).map(|l| (l, adjacency[(k, l)])).collect()).collect();

    Ok(Graph { adjacency, laplacian, eigenvalues: eig.values, eigenvectors: eig.vectors, neighbors })
}

impl Graph {
    pub fn n_agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Ascending Laplacian eigenvalues (graph frequencies).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, sign fixed so the first
    /// significant entry is positive.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    pub fn degree(&self, k: usize) -> f64 {
        self.laplacian[(k, k)]
    }

    pub fn max_degree(&self) -> f64 {
        (0..self.n_agents()).map(|k| self.degree(k)).fold(0.0, f64::max)
    }

    /// True when two Laplacian eigenvalues coincide within `tol`.
    pub fn has_repeated_eigenvalues(&self, tol: f64) -> bool {
        self.eigenvalues.windows(2).any(|w| (w[1] - w[0]).abs() <= tol)
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `L x` for a stacked signal, applied blockwise through neighbourhoods.
    pub fn apply_laplacian(&self, w: &StackedSignal) -> StackedSignal {
        let m = w.block_dim();
        let mut out = StackedSignal::zeros(self.n_agents(), m);
        for k in 0..self.n_agents() {
            let wk = w.block(k);
            let dst = out.block_mut(k);
            for &(l, a) in &self.neighbors[k] {
                let wl = w.block(l);
                for j in 0..m {
                    dst[j] += a * (wk[j] - wl[j]);
                }
            }
        }
        out
    }

    /// Writes the graph as a `k l weight` edge list (1-based, `k < l`).
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes {}\n", self.n_agents());
        for k in 0..self.n_agents() {
            for &(l, a) in &self.neighbors[k] {
                if k < l {
                    writeln!(out, "{} {} {}", k + 1, l + 1, a).unwrap();
                }
            }
        }
        out
    }
}

/// Parses a plain-text edge list: one `k l weight` triple per line, 1-based
/// node indices, `#` starts a comment. A `# nodes N` comment fixes the node
/// count; otherwise it is the largest index seen.
pub fn parse_edge_list(text: &str) -> Result<DMatrix<f64>> {
    let mut declared: Option<usize> = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::EdgeList { line: line_no, message };
        let trimmed = raw.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            if parts.next() == Some("nodes") {
                let n = parts
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| err("malformed `# nodes N` header".into()))?;
                declared = Some(n);
            }
            continue;
        }
        let content = trimmed.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected `k l weight`, got {content:?}")));
        }
        let k: usize = fields[0].parse().map_err(|_| err(format!("bad node index {:?}", fields[0])))?;
        let l: usize = fields[1].parse().map_err(|_| err(format!("bad node index {:?}", fields[1])))?;
        let w: f64 = fields[2].parse().map_err(|_| err(format!("bad weight {:?}", fields[2])))?;
        if k == 0 || l == 0 {
            return Err(err("node indices are 1-based".into()));
        }
        edges.push((line_no, k - 1, l - 1, w));
    }
    let max_index = edges.iter().map(|&(_, k, l, _)| k.max(l) + 1).max().unwrap_or(0);
    let n = declared.unwrap_or(max_index);
    if max_index > n {
        return Err(Error::EdgeList {
            line: 0,
            message: format!("node index {max_index} exceeds declared node count {n}"),
        });
    }
    let mut adjacency = DMatrix::<f64>::zeros(n, n);
    for (line, k, l, w) in edges {
        if adjacency[(k, l)] != 0.0 {
            return Err(Error::EdgeList { line, message: format!("duplicate edge {} {}", k + 1, l + 1) });
        }
        adjacency[(k, l)] = w;
        adjacency[(l, k)] = w;
    }
    Ok(adjacency)
}

/// Random geometric graph: `n` points uniform in the unit square, an edge of
/// weight `weight` between points closer than `radius`. Draws are retried
/// (up to 100 attempts, stream `attempt`) until the graph is connected.
pub fn random_geometric(n: usize, radius: f64, weight: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if !(radius > 0.0) || !(weight > 0.0) {
        return Err(Error::InvalidParameter("radius and weight must be positive".into()));
    }
    let mut last = Error::EmptyGraph;
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let points: Vec<(f64, f64)> = (0..n).map(|_| (unit_open(rng.next_u64()), unit_open(rng.next_u64()))).collect();
        let mut adjacency = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                if (dx * dx + dy * dy).sqrt() <= radius {
                    adjacency[(i, j)] = weight;
                    adjacency[(j, i)] = weight;
                }
            }
        }
        match build_graph(adjacency) {
            Ok(g) => return Ok(g),
            Err(e @ Error::Disconnected { .. }) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Network-wide stacked vector `col{w_1, ..., w_N}` with `w_k` of length `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSignal {
    n_agents: usize,
    block_dim: usize,
    values: Vec<f64>,
}

impl StackedSignal {
    pub fn new(n_agents: usize, block_dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_agents * block_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {n_agents} blocks of size {block_dim}",
                values.len()
            )));
        }
        Ok(Self { n_agents, block_dim, values })
    }

    pub fn zeros(n_agents: usize, block_dim: usize) -> Self {
        Self { n_agents, block_dim, values: vec![0.0; n_agents * block_dim] }
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let m = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|b| b.len() != m) {
            return Err(Error::DimensionMismatch("ragged blocks".into()));
        }
        Ok(Self { n_agents: blocks.len(), block_dim: m, values: blocks.concat() })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.values[k * self.block_dim..(k + 1) * self.block_dim]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.block_dim..(k + 1) * self.block_dim]
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self { n_agents: self.n_agents, block_dim: self.block_dim, values }
    }

    pub fn distance_sq(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

fn check_dims(w: &StackedSignal, g: &Graph) -> Result<()> {
    if w.n_agents() != g.n_agents() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} blocks, graph has {} nodes",
            w.n_agents(),
            g.n_agents()
        )));
    }
    Ok(())
}

/// Graph smoothness `1/2 sum_k sum_l a_kl ||w_k - w_l||^2`.
pub fn smoothness(w: &StackedSignal, g: &Graph) -> Result<f64> {
    check_dims(w, g)?;
    let mut acc = 0.0;
    for k in 0..g.n_agents() {
        let wk = w.block(k);
        for &(l, a) in g.neighbors_of(k) {
            let d: f64 = wk.iter().zip(w.block(l)).map(|(x, y)| (x - y) * (x - y)).sum();
            acc += a * d;
        }
    }
    Ok(0.5 * acc)
}

/// Smoothness through the spectrum: `sum_m lambda_m ||wbar_m||^2`.
pub fn smoothness_spectral(w: &StackedSignal, g: &Graph) -> Result<f64> {
    let spec = gft(w, g)?;
    Ok(g.eigenvalues().iter().enumerate().map(|(m, &lam)| lam * spec.block(m).iter().map(|x| x * x).sum::<f64>()).sum())
}

/// Block graph Fourier transform `wbar = (V^T (x) I_M) w`.
pub fn gft(w: &StackedSignal, g: &Graph) -> Result<StackedSignal> {
    check_dims(w, g)?;
    let n = g.n_agents();
    let v = g.eigenvectors();
    let mut out = StackedSignal::zeros(n, w.block_dim());
    for m in 0..n {
        let dst = out.block_mut(m);
        for k in 0..n {
            let c = v[(k, m)];
            for (d, x) in dst.iter_mut().zip(w.block(k)) {
                *d += c * x;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`gft`]: `w = (V (x) I_M) wbar`.
pub fn igft(spectrum: &StackedSignal, g: &Graph) -> Result<StackedSignal> {
    check_dims(spectrum, g)?;
    let n = g.n_agents();
    let v = g.eigenvectors();
    let mut out = StackedSignal::zeros(n, spectrum.block_dim());
    for k in 0..n {
        let dst = out.block_mut(k);
        for m in 0..n {
            let c = v[(k, m)];
            for (d, x) in dst.iter_mut().zip(spectrum.block(m)) {
                *d += c * x;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        build_graph(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0])).unwrap()
    }

    #[test]
    fn two_node_graph() {
        let g = build_graph(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(g.laplacian(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert!(g.eigenvalues()[0].abs() < 1e-15);
        assert!((g.eigenvalues()[1] - 2.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((g.eigenvectors()[(0, 0)] - s).abs() < 1e-14);
        assert!((g.eigenvectors()[(1, 0)] - s).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_adjacency() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(matches!(build_graph(asym), Err(Error::NotSymmetric { .. })));
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(matches!(build_graph(neg), Err(Error::NegativeWeight { .. })));
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        assert!(matches!(build_graph(diag), Err(Error::NonzeroDiagonal { node: 0 })));
        let split = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(build_graph(split), Err(Error::Disconnected { .. })));
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(build_graph(rect), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn single_node_graph_is_allowed() {
        let g = build_graph(DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(g.eigenvalues(), &[0.0]);
        assert_eq!(g.eigenvectors()[(0, 0)], 1.0);
    }

    #[test]
    fn smoothness_single_edge() {
        let g = build_graph(DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.1, 0.0])).unwrap();
        let w = StackedSignal::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!((smoothness(&w, &g).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_signal_is_perfectly_smooth() {
        let g = path3();
        let w = StackedSignal::from_blocks(&vec![vec![1.5, -2.0]; 3]).unwrap();
        assert_eq!(smoothness(&w, &g).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = path3();
        let w = StackedSignal::zeros(2, 1);
        assert!(matches!(smoothness(&w, &g), Err(Error::DimensionMismatch(_))));
        assert!(matches!(gft(&w, &g), Err(Error::DimensionMismatch(_))));
        assert!(StackedSignal::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gft_of_constant_lives_in_first_block() {
        let g = path3();
        let c = [0.3, -1.0];
        let v1 = g.eigenvectors().column(0);
        let blocks: Vec<Vec<f64>> = (0..3).map(|k| c.iter().map(|x| v1[k] * x).collect()).collect();
        let spec = gft(&StackedSignal::from_blocks(&blocks).unwrap(), &g).unwrap();
        assert!((spec.block(0)[0] - c[0]).abs() < 1e-14);
        assert!((spec.block(0)[1] - c[1]).abs() < 1e-14);
        for m in 1..3 {
            assert!(spec.block(m).iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let text = "# a comment\n1 2 0.1\n2 3 0.25  # trailing\n\n3 1 0.1\n";
        let a = parse_edge_list(text).unwrap();
        assert_eq!(a.nrows(), 3);
        assert_eq!(a[(1, 2)], 0.25);
        assert_eq!(a[(0, 2)], 0.1);
        let g = build_graph(a.clone()).unwrap();
        assert_eq!(parse_edge_list(&g.to_edge_list()).unwrap(), a);
    }

    #[test]
    fn edge_list_errors_carry_line_numbers() {
        assert!(matches!(parse_edge_list("1 2\n"), Err(Error::EdgeList { line: 1, .. })));
        assert!(matches!(parse_edge_list("0 1 1.0\n"), Err(Error::EdgeList { line: 1, .. })));
        assert!(matches!(parse_edge_list("1 2 1\n2 1 1\n"), Err(Error::EdgeList { line: 2, .. })));
        assert!(parse_edge_list("# nodes 2\n1 3 1\n").is_err());
        assert_eq!(parse_edge_list("# nodes 4\n1 2 1\n").unwrap().nrows(), 4);
    }

    #[test]
    fn geometric_generator_is_connected_and_seeded() {
        let a = random_geometric(15, 0.4, 0.1, 3).unwrap();
        let b = random_geometric(15, 0.4, 0.1, 3).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
        assert!(a.eigenvalues()[1] > CONNECTIVITY_TOLERANCE);
        assert!(random_geometric(15, 1e-3, 0.1, 3).is_err());
    }
}
