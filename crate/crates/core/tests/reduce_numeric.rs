mod common;

use flakecat::reduce::{
    conditional_probabilities, fit_isomap, fit_lda, fit_pca, fit_tsne, fit_tsne_detailed, row_entropy_bits,
    transform, ReduceError, TsneOptions,
};
use flakecat::linalg::pairwise_squared_distances;
use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use common::{blobs, brute_nearest, rng};

fn covariance(z: &Array2<f64>) -> Array2<f64> {
    let mean = z.mean_axis(Axis(0)).unwrap();
    let c = z - &mean;
    c.t().dot(&c) / (z.nrows() as f64 - 1.0)
}

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut r))
}

#[test]
fn pca_basis_orthonormal_and_scores_decorrelated() {
    let x = gaussian(150, 6, 1).dot(&gaussian(6, 6, 2));
    let p = fit_pca(x.view(), 4).unwrap();
    let gram = p.basis.t().dot(&p.basis);
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[[i, j]] - want).abs() < 1e-6);
        }
    }
    let z = transform(&p, x.view()).unwrap().values;
    let cov = covariance(&z);
    let scale = cov[[0, 0]];
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(cov[[i, j]].abs() < 1e-6 * scale, "cov[{i},{j}] = {}", cov[[i, j]]);
            }
        }
    }
}

#[test]
fn pca_full_rank_reconstructs_and_sums_to_trace() {
    let x = gaussian(60, 5, 3).dot(&gaussian(5, 5, 4));
    let p = fit_pca(x.view(), 5).unwrap();
    let z = transform(&p, x.view()).unwrap().values;
    let back = p.inverse_transform(z.view());
    let err = (&back - &x).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(err < 1e-8, "max reconstruction error {err}");
    let trace: f64 = covariance(&x).diag().sum();
    let eig: f64 = p.eigenvalues.iter().sum();
    assert!((trace - eig).abs() < 1e-8 * trace.max(1.0));
}

#[test]
fn pca_recovers_three_factor_model() {
    let factors = gaussian(200, 3, 5);
    let loading = gaussian(3, 12, 6);
    let noise = gaussian(200, 12, 7) * 0.01;
    let x = factors.dot(&loading) + noise;
    let p = fit_pca(x.view(), 3).unwrap();
    let ratio: f64 = p.explained_variance_ratio().iter().sum();
    assert!(ratio >= 0.99, "explained {ratio}");
}

#[test]
fn lda_rank_is_capped_by_class_count() {
    let (x, y) = blobs(4, 20, 6, 5.0, 8);
    assert_eq!(fit_lda(x.view(), &y, 3, 1e-4).unwrap().n_components(), 3);
    assert_eq!(fit_lda(x.view(), &y, 6, 1e-4).unwrap().n_components(), 3);
    assert_eq!(fit_lda(x.view(), &[0; 80], 1, 1e-4).unwrap_err(), ReduceError::SingleClass);
}

#[test]
fn lda_ignores_a_constant_shift() {
    let (x, y) = blobs(4, 25, 6, 4.0, 9);
    let shift = Array1::from(vec![3.0, -7.0, 100.0, 0.5, 2.0, -1.0]);
    let shifted = &x + &shift;
    let a = fit_lda(x.view(), &y, 3, 1e-4).unwrap();
    let b = fit_lda(shifted.view(), &y, 3, 1e-4).unwrap();
    let za = transform(&a, x.view()).unwrap().values;
    let zb = transform(&b, shifted.view()).unwrap().values;
    for c in 0..3 {
        let sign = if za.column(c).dot(&zb.column(c)) >= 0.0 { 1.0 } else { -1.0 };
        let diff = (&za.column(c) - &(&zb.column(c) * sign)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-6, "component {c} differs by {diff}");
    }
}

#[test]
fn isomap_on_a_plane_keeps_distances() {
    // a 2-D grid embedded in 5-D by an orthonormal map plus offset
    let grid = Array2::from_shape_fn((49, 2), |(i, j)| if j == 0 { (i % 7) as f64 } else { (i / 7) as f64 });
    let q = {
        let a = gaussian(5, 2, 10);
        // Gram-Schmidt on the two columns
        let c0 = a.column(0).to_owned();
        let c0 = &c0 / c0.dot(&c0).sqrt();
        let mut c1 = a.column(1).to_owned();
        c1 = &c1 - &(&c0 * c0.dot(&c1));
        let c1 = &c1 / c1.dot(&c1).sqrt();
        let mut q = Array2::zeros((2, 5));
        q.row_mut(0).assign(&c0);
        q.row_mut(1).assign(&c1);
        q
    };
    let x = grid.dot(&q) + 1.5;
    // k large enough that every graph path is a straight segment
    let z = fit_isomap(x.view(), 48, 2).unwrap().values;
    let dx = pairwise_squared_distances(x.view());
    let dz = pairwise_squared_distances(z.view());
    for i in 0..49 {
        for j in 0..49 {
            assert!((dx[[i, j]].sqrt() - dz[[i, j]].sqrt()).abs() < 1e-6);
        }
    }
}

#[test]
fn tsne_rows_hit_the_perplexity() {
    let x = gaussian(90, 5, 11);
    let d2 = pairwise_squared_distances(x.view());
    for perplexity in [5.0, 15.0, 29.0] {
        let p = conditional_probabilities(d2.view(), perplexity);
        for i in 0..90 {
            let h = row_entropy_bits(p.row(i));
            assert!((h - perplexity.log2()).abs() <= 1e-5, "row {i}: {h}");
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn tsne_kl_does_not_rise_late() {
    let (x, _) = blobs(3, 40, 5, 6.0, 12);
    let run = fit_tsne_detailed(x.view(), &TsneOptions::new(20.0, 1000, 3)).unwrap();
    let tail = &run.kl_history[run.kl_history.len() - 100..];
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "KL rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn tsne_separates_tight_blobs() {
    let (x, y) = blobs(3, 50, 4, 10.0 / 0.1, 13);
    let x = x * 0.1;
    let z = fit_tsne(x.view(), 30.0, 1000, 4).unwrap().values;
    let correct = (0..z.nrows()).filter(|&i| y[brute_nearest(&z, i)] == y[i]).count();
    assert!(correct as f64 / z.nrows() as f64 >= 0.95);
}
