use ndarray::{Array2, ArrayView2};

use super::{center, fix_signs, row_space_basis, Projection, ProjectionKind, ReduceError};
use crate::linalg::symmetric_eigen;

/// Top-`r` principal components of the sample covariance.
///
/// When fewer than `r` eigenvalues are positive the available components are
/// returned and `rank_deficient` is set.
pub fn fit_pca(x: ArrayView2<f64>, r: usize) -> Result<Projection, ReduceError> {
    let (n, d) = x.dim();
    let max = d.min(n.saturating_sub(1));
    if r == 0 || r > max {
        return Err(ReduceError::InvalidRank { requested: r, max });
    }
    let (centered, mean) = center(x);
    let denom = (n - 1) as f64;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / denom;

    let (eigenvalues, mut basis) = if d <= n {
        let cov = centered.t().dot(&centered) / denom;
        let (vals, vecs) = symmetric_eigen(cov.view());
        let tol = vals[0].max(0.0) * 1e-12;
        let avail = vals.iter().take(r).filter(|&&v| v > tol && v > 0.0).count();
        let basis = vecs.slice(ndarray::s![.., ..avail]).to_owned();
        (vals.iter().take(avail).copied().collect::<Vec<_>>(), basis)
    } else {
        let (basis, gram_vals) = row_space_basis(centered.view());
        let avail = gram_vals.len().min(r);
        let basis: Array2<f64> = basis.slice(ndarray::s![.., ..avail]).to_owned();
        (gram_vals.iter().take(avail).map(|v| v / denom).collect(), basis)
    };
    if eigenvalues.is_empty() {
        return Err(ReduceError::RankDeficient);
    }
    let rank_deficient = eigenvalues.len() < r;
    if rank_deficient {
        log::warn!("PCA: only {} of {r} requested components have positive variance", eigenvalues.len());
    }
    fix_signs(&mut basis);
    Ok(Projection {
        mean,
        basis,
        kind: ProjectionKind::Pca,
        eigenvalues,
        total_variance,
        rank_deficient,
        uninformative: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::transform;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_pair() {
        let p = fit_pca(array![[-1.0, -1.0], [1.0, 1.0]].view(), 1).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((p.basis[[0, 0]] - h).abs() < 1e-12 && (p.basis[[1, 0]] - h).abs() < 1e-12);
        assert!((p.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_bounds() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]];
        assert!(matches!(fit_pca(x.view(), 0), Err(ReduceError::InvalidRank { .. })));
        assert!(matches!(fit_pca(x.view(), 3), Err(ReduceError::InvalidRank { requested: 3, max: 2 })));
    }

    #[test]
    fn rank_deficient_flagged() {
        let x = array![[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [3.0, 3.0, 0.0]];
        let p = fit_pca(x.view(), 2).unwrap();
        assert!(p.rank_deficient);
        assert_eq!(p.n_components(), 1);
    }

    #[test]
    fn gram_route_matches_covariance_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wide = Array2::from_shape_fn((6, 10), |_| rng.random::<f64>());
        let p_wide = fit_pca(wide.view(), 4).unwrap();
        let (c, _) = center(wide.view());
        let cov = c.t().dot(&c) / 5.0;
        let (vals, vecs) = symmetric_eigen(cov.view());
        for j in 0..4 {
            assert!((p_wide.eigenvalues[j] - vals[j]).abs() < 1e-10);
            let dot: f64 = p_wide.basis.column(j).dot(&vecs.column(j));
            assert!((dot.abs() - 1.0).abs() < 1e-8);
        }
        let z = transform(&p_wide, wide.view()).unwrap();
        assert_eq!(z.values.dim(), (6, 4));
    }
}
