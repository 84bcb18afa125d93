mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use smoothnet::graph::{gft, smoothness, StackedSignal};
use smoothnet::rng::NormalStream;
use smoothnet::tasks::{make_smooth_target, sample, stochastic_gradient, Covariance, StochasticCost, TaskEnsemble};

const SAMPLES: usize = 100_000;

fn one_agent(cov: Covariance, target: Vec<f64>, noise: f64) -> TaskEnsemble {
    let m = target.len();
    TaskEnsemble::uniform(StackedSignal::new(1, m, target).unwrap(), cov, noise).unwrap()
}

#[test]
fn regressor_covariance_converges() {
    let mut d = Draw::new(1);
    let r = random_spd(3, &mut d);
    let ens = one_agent(Covariance::full(r.clone()).unwrap(), vec![0.2, -0.1, 0.4], 0.1);
    let mut stream = NormalStream::new(7, 0, 0);
    let mut acc = DMatrix::zeros(3, 3);
    for _ in 0..SAMPLES {
        let u = DVector::from_column_slice(&sample(&ens, 0, &mut stream).regressor);
        acc += &u * u.transpose();
    }
    let emp = acc / SAMPLES as f64;
    assert!((emp - &r).norm() / r.norm() < 0.03);
}

#[test]
fn observation_noise_has_expected_moments() {
    let target = vec![0.3, -0.7, 1.1, 0.0, 0.5];
    let ens = one_agent(Covariance::scalar(1.0).unwrap(), target.clone(), 0.1);
    let mut stream = NormalStream::new(3, 0, 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..SAMPLES {
        let s = sample(&ens, 0, &mut stream);
        let v = s.observation - s.regressor.iter().zip(&target).map(|(a, b)| a * b).sum::<f64>();
        sum += v;
        sum_sq += v * v;
    }
    let n = SAMPLES as f64;
    let mean = sum / n;
    let var = sum_sq / n - mean * mean;
    assert!(mean.abs() < 4.0 * var.sqrt() / n.sqrt());
    assert!((var - 0.1).abs() / 0.1 < 0.05);
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let mut d = Draw::new(2);
    let r = random_spd(3, &mut d);
    let target = vec![1.0, -0.5, 0.25];
    let ens = one_agent(Covariance::full(r.clone()).unwrap(), target.clone(), 0.2);
    let w = [0.1, 0.3, -0.6];
    let truth = &r * DVector::from_iterator(3, w.iter().zip(&target).map(|(a, b)| a - b));
    let mut stream = NormalStream::new(11, 0, 0);
    let mut acc = DVector::zeros(3);
    for _ in 0..SAMPLES {
        let s = sample(&ens, 0, &mut stream);
        acc += DVector::from_vec(stochastic_gradient(&ens, 0, &w, &s).unwrap());
    }
    let emp = acc / SAMPLES as f64;
    assert!((emp - &truth).norm() / truth.norm() < 0.02);
}

#[test]
fn gradient_noise_is_zero_mean_and_uncorrelated_across_agents() {
    let mut d = Draw::new(4);
    let targets = random_signal(2, 2, &mut d);
    let ens = TaskEnsemble::new(
        targets,
        vec![Covariance::scalar(1.0).unwrap(), Covariance::full(random_spd(2, &mut d)).unwrap()],
        vec![0.1, 0.15],
    )
    .unwrap();
    let w = [[0.4, -0.2], [0.0, 0.9]];
    let mut streams = [NormalStream::new(5, 0, 0), NormalStream::new(5, 0, 1)];
    let mut scratch = [0.0; 2];
    let mut stoch = [0.0; 2];
    let mut truth = [0.0; 2];
    let mut noise = [Vec::with_capacity(SAMPLES), Vec::with_capacity(SAMPLES)];
    for _ in 0..SAMPLES {
        for k in 0..2 {
            ens.stochastic_gradient(k, &w[k], &mut streams[k], &mut scratch, &mut stoch);
            ens.true_gradient(k, &w[k], &mut truth);
            noise[k].push(truth[0] - stoch[0]);
        }
    }
    let n = SAMPLES as f64;
    let stats = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
        (m, v.sqrt())
    };
    let (m0, s0) = stats(&noise[0]);
    let (m1, s1) = stats(&noise[1]);
    assert!(m0.abs() < 4.0 * s0 / n.sqrt());
    assert!(m1.abs() < 4.0 * s1 / n.sqrt());
    let cov: f64 = noise[0].iter().zip(&noise[1]).map(|(a, b)| (a - m0) * (b - m1)).sum::<f64>() / n;
    assert!((cov / (s0 * s1)).abs() < 0.02);
}

#[test]
fn smooth_target_spectrum_is_exact() {
    let g = reference_graph();
    let tau: Vec<f64> = (1..=5).map(|j| j as f64).collect();
    let w = make_smooth_target(&g, &tau, 5).unwrap();
    let spec = gft(&w, &g).unwrap();
    for (m, &lambda) in g.eigenvalues().iter().enumerate() {
        for (j, &t) in tau.iter().enumerate() {
            let expect = (-t * lambda).exp() / 5f64.sqrt();
            assert!((spec.block(m)[j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn shifted_decay_is_smoother() {
    let g = reference_graph();
    let low: Vec<f64> = (1..=5).map(|j| j as f64).collect();
    let high: Vec<f64> = (1..=5).map(|j| 7.0 + j as f64).collect();
    let a = smoothness(&make_smooth_target(&g, &low, 5).unwrap(), &g).unwrap();
    let b = smoothness(&make_smooth_target(&g, &high, 5).unwrap(), &g).unwrap();
    assert!(b < a);
}
