#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isotropic unit-variance blobs, `per_class` points each, class `c` centred
/// on `spacing / √2 · e_c` so any two centres are `spacing` apart.
pub fn blobs(n_classes: usize, per_class: usize, dim: usize, spacing: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    assert!(dim >= n_classes);
    let mut r = rng(seed);
    let offset = spacing / 2f64.sqrt();
    let n = n_classes * per_class;
    let mut x = Array2::zeros((n, dim));
    let mut y = Vec::with_capacity(n);
    for c in 0..n_classes {
        for i in 0..per_class {
            let row = c * per_class + i;
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut r);
                x[[row, j]] = noise + if j == c { offset } else { 0.0 };
            }
            y.push(c);
        }
    }
    (x, y)
}

pub fn uniform(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, d), |_| r.random::<f64>())
}

pub fn random_labels(n: usize, n_classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0..n_classes)).collect()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Nearest other row by exhaustive scan, lower index on distance ties.
pub fn brute_nearest(x: &Array2<f64>, i: usize) -> usize {
    let xi = x.row(i).to_vec();
    let mut best = (f64::INFINITY, usize::MAX);
    for j in 0..x.nrows() {
        if j == i {
            continue;
        }
        let d = dist2(&xi, &x.row(j).to_vec());
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}
