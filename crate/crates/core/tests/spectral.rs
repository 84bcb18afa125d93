mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use smoothnet::graph::{build_graph, gft, igft, smoothness, smoothness_spectral, StackedSignal};
use smoothnet::regularized::kron_laplacian;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigendecomposition_reconstructs_laplacian(seed in any::<u64>(), n in 2usize..=50, density in 0.0f64..0.5) {
        let g = random_graph(n, density, &mut Draw::new(seed));
        let v = g.eigenvectors();
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(g.eigenvalues()));
        let recon = v * lambda * v.transpose();
        prop_assert!((g.laplacian() - recon).norm() < 1e-10);
        prop_assert!((v.transpose() * v - DMatrix::identity(n, n)).norm() < 1e-10);
        prop_assert!(g.eigenvalues()[0].abs() < 1e-12);
        prop_assert!(g.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        for m in 0..n {
            let first = v.column(m).iter().copied().find(|x| x.abs() > 1e-12).unwrap();
            prop_assert!(first > 0.0);
        }
    }

    #[test]
    fn smoothness_forms_agree(seed in any::<u64>(), n in 2usize..=12, m in 1usize..=4) {
        let mut d = Draw::new(seed);
        let g = random_graph(n, 0.3, &mut d);
        let w = random_signal(n, m, &mut d);
        let edge = smoothness(&w, &g).unwrap();
        let x = w.to_dvector();
        let quad = (x.transpose() * kron_laplacian(&g, m) * &x)[(0, 0)];
        let spectral = smoothness_spectral(&w, &g).unwrap();
        prop_assert!(edge >= 0.0);
        prop_assert!((edge - quad).abs() < 1e-10);
        prop_assert!((edge - spectral).abs() < 1e-10);
    }

    #[test]
    fn smoothness_ignores_common_shift(seed in any::<u64>(), n in 2usize..=10, m in 1usize..=3) {
        let mut d = Draw::new(seed);
        let g = random_graph(n, 0.3, &mut d);
        let w = random_signal(n, m, &mut d);
        let shift: Vec<f64> = (0..m).map(|_| d.uniform(-3.0, 3.0)).collect();
        let mut shifted = w.clone();
        for k in 0..n {
            for (x, s) in shifted.block_mut(k).iter_mut().zip(&shift) {
                *x += s;
            }
        }
        let a = smoothness(&w, &g).unwrap();
        let b = smoothness(&shifted, &g).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a));
    }

    #[test]
    fn gft_is_an_isometry_with_inverse(seed in any::<u64>(), n in 1usize..=15, m in 1usize..=4) {
        let mut d = Draw::new(seed);
        let g = if n == 1 { build_graph(DMatrix::zeros(1, 1)).unwrap() } else { random_graph(n, 0.3, &mut d) };
        let w = random_signal(n, m, &mut d);
        let spec = gft(&w, &g).unwrap();
        prop_assert!((spec.norm_sq().sqrt() - w.norm_sq().sqrt()).abs() < 1e-10);
        let back = igft(&spec, &g).unwrap();
        prop_assert!(back.distance_sq(&w).sqrt() < 1e-10);
    }
}

#[test]
fn smoothness_vanishes_only_on_constant_signals() {
    let mut d = Draw::new(5);
    let g = random_graph(8, 0.2, &mut d);
    let constant = StackedSignal::from_blocks(&vec![vec![0.7, -1.2]; 8]).unwrap();
    assert!(smoothness(&constant, &g).unwrap() < 1e-14);
    let mut bumped = constant.clone();
    bumped.block_mut(3)[1] += 1e-3;
    assert!(smoothness(&bumped, &g).unwrap() > 0.0);
}

#[test]
fn jacobi_matches_characteristic_polynomial() {
    for seed in 0..30 {
        let mut d = Draw::new(seed);
        let n = 2 + (seed as usize % 3);
        let g = random_graph(n, 0.6, &mut d);
        let roots = char_poly_roots(g.laplacian());
        assert_eq!(roots.len(), n, "seed {seed}: {roots:?}");
        for (a, b) in roots.iter().zip(g.eigenvalues()) {
            assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn stand_in_topology_has_distinct_spectrum() {
    let g = reference_graph();
    assert_eq!(g.n_agents(), 15);
    assert!(g.eigenvalues()[0].abs() < 1e-12);
    assert!(!g.has_repeated_eigenvalues(1e-6));
    assert!(g.adjacency().iter().all(|&a| a == 0.0 || a == 0.07));
}

#[test]
fn gft_of_first_eigenvector_block() {
    let g = random_graph(6, 0.4, &mut Draw::new(9));
    let c = [0.5, -2.0, 1.5];
    let v1 = g.eigenvectors().column(0);
    let blocks: Vec<Vec<f64>> = (0..6).map(|k| c.iter().map(|x| v1[k] * x).collect()).collect();
    let spec = gft(&StackedSignal::from_blocks(&blocks).unwrap(), &g).unwrap();
    for (a, b) in spec.block(0).iter().zip(&c) {
        assert!((a - b).abs() < 1e-12);
    }
    for m in 1..6 {
        assert!(spec.block(m).iter().all(|x| x.abs() < 1e-12));
    }
}
