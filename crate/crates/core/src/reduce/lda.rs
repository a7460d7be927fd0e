use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{center, fix_signs, row_space_basis, Projection, ProjectionKind, ReduceError};
use crate::linalg::{cholesky, solve_lower_matrix, symmetric_eigen};

/// Default shrinkage weight on the trace-scaled identity.
pub const DEFAULT_SHRINKAGE: f64 = 1e-4;

const UNINFORMATIVE_EIGENVALUE: f64 = 1e-9;

/// Fisher discriminant projection.
///
/// Solves `S_b v = λ (S_w + α I) v` with `α = shrinkage · tr(S_w) / d`, using
/// within-class and between-class scatter normalized by `n`. Components are
/// scaled so `vᵀ (S_w + α I) v = 1`. Requests above `C − 1` components are
/// capped.
///
/// Both scatter matrices live in the span of the centered rows, so when
/// `d > n` the problem is solved exactly in that subspace.
pub fn fit_lda(x: ArrayView2<f64>, y: &[usize], r: usize, shrinkage: f64) -> Result<Projection, ReduceError> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(ReduceError::LabelMismatch { labels: y.len(), rows: n });
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(ReduceError::SingleClass);
    }
    if let Some((&c, _)) = members.iter().find(|(_, rows)| rows.len() < 2) {
        return Err(ReduceError::DegenerateClass(c));
    }
    let max = members.len() - 1;
    if r == 0 {
        return Err(ReduceError::InvalidRank { requested: r, max });
    }
    let r = if r > max {
        log::warn!("LDA: {r} components requested, capping at {max}");
        max
    } else {
        r
    };

    let (centered, mean) = center(x);
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / (n.max(2) - 1) as f64;
    let subspace = if d > n { Some(row_space_basis(centered.view()).0) } else { None };
    let z = match &subspace {
        Some(u) => centered.dot(u),
        None => centered,
    };
    let m = z.ncols();
    if m == 0 {
        return Err(ReduceError::RankDeficient);
    }

    let nf = n as f64;
    let mut s_w = Array2::<f64>::zeros((m, m));
    let mut s_b = Array2::<f64>::zeros((m, m));
    for rows in members.values() {
        let block = z.select(Axis(0), rows);
        let class_mean: Array1<f64> = block.mean_axis(Axis(0)).expect("non-empty class");
        let dev = &block - &class_mean.view().insert_axis(Axis(0));
        s_w += &(dev.t().dot(&dev) / nf);
        let prior = rows.len() as f64 / nf;
        let mc = class_mean.view().insert_axis(Axis(1));
        s_b += &(mc.dot(&mc.t()) * prior);
    }
    let alpha = shrinkage * s_w.diag().sum() / d as f64;
    let mut reg = s_w;
    reg.diag_mut().mapv_inplace(|v| v + alpha);
    let l = cholesky(reg.view()).ok_or(ReduceError::SingularScatter)?;

    // C = L⁻¹ S_b L⁻ᵀ is symmetric; its eigenvectors w give v = L⁻ᵀ w.
    let left = solve_lower_matrix(l.view(), s_b.view());
    let c = solve_lower_matrix(l.view(), left.t());
    let (vals, vecs) = symmetric_eigen(c.view());
    let w = vecs.slice(ndarray::s![.., ..r]).to_owned();
    let mut v = Array2::<f64>::zeros((m, r));
    for j in 0..r {
        let col = crate::linalg::solve_upper_transposed(l.view(), w.column(j));
        v.column_mut(j).assign(&col);
    }
    let mut basis = match &subspace {
        Some(u) => u.dot(&v),
        None => v,
    };
    fix_signs(&mut basis);
    let eigenvalues: Vec<f64> = vals.iter().take(r).map(|&e| e.max(0.0)).collect();
    let uninformative = eigenvalues.iter().all(|&e| e <= UNINFORMATIVE_EIGENVALUE);
    if uninformative {
        log::warn!("LDA: class means coincide; projection carries no discriminant information");
    }
    Ok(Projection {
        mean,
        basis,
        kind: ProjectionKind::Lda,
        eigenvalues,
        total_variance,
        rank_deficient: false,
        uninformative,
    })
}
