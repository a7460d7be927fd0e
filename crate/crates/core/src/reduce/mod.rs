//! Dimensionality reduction.
//!
//! PCA and LDA are parametric: they fit a [`Projection`] that can be applied
//! to unseen rows with [`transform`]. Isomap and exact t-SNE embed the matrix
//! they are given and have no out-of-sample extension.

mod isomap;
mod lda;
mod pca;
mod tsne;

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{write_labeled_csv, EmbedError};

pub use isomap::{fit_isomap, geodesic_distances, knn_graph};
pub use lda::{fit_lda, DEFAULT_SHRINKAGE};
pub use pca::fit_pca;
pub use tsne::{
    conditional_probabilities, fit_tsne, fit_tsne_detailed, row_entropy_bits, TsneOptions, TsneRun,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReduceError {
    #[error("requested {requested} components but at most {max} are available")]
    InvalidRank { requested: usize, max: usize },
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {0} has fewer than 2 samples")]
    DegenerateClass(usize),
    #[error("LDA needs at least two classes")]
    SingleClass,
    #[error("labels ({labels}) and rows ({rows}) differ in length")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("neighbor graph has {0} connected components")]
    DisconnectedGraph(usize),
    #[error("perplexity {perplexity} outside (1, n/3) for n = {n}")]
    PerplexityOutOfRange { perplexity: f64, n: usize },
    #[error("t-SNE needs at least 250 iterations, got {0}")]
    TooFewIterations(usize),
    #[error("k_neighbors must be in 1..n")]
    InvalidNeighbors,
    #[error("no positive-variance direction in the data")]
    RankDeficient,
    #[error("within-class scatter is not positive definite; increase shrinkage")]
    SingularScatter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProjectionKind {
    Pca,
    Lda,
}

/// Fitted linear projection `x ↦ (x − mean) · basis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Array1<f64>,
    /// `d × r`, one component per column.
    pub basis: Array2<f64>,
    pub kind: ProjectionKind,
    /// Eigenvalue per component, descending.
    pub eigenvalues: Vec<f64>,
    /// Total variance of the fitted data (trace of the sample covariance).
    pub total_variance: f64,
    /// Fewer components than requested had positive eigenvalues.
    pub rank_deficient: bool,
    /// Every discriminant eigenvalue is numerically zero (LDA only).
    pub uninformative: bool,
}

impl Projection {
    pub fn n_components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    /// Maps reduced coordinates back into input space (exact for PCA at full rank).
    pub fn inverse_transform(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let mut x = z.dot(&self.basis.t());
        x += &self.mean;
        x
    }

    pub fn tag(&self) -> String {
        match self.kind {
            ProjectionKind::Pca => format!("pca(r={})", self.n_components()),
            ProjectionKind::Lda => format!("lda(r={})", self.n_components()),
        }
    }
}

/// Reduced data, rows aligned with the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<String>,
    pub reducer_tag: String,
}

impl ReducedMatrix {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_row_ids(mut self, row_ids: Vec<String>) -> Self {
        assert_eq!(row_ids.len(), self.values.nrows());
        self.row_ids = row_ids;
        self
    }

    /// Writes `test_id,label,c0..c{r-1}`.
    pub fn write_csv<W: Write>(&self, writer: W, labels: &[String]) -> Result<(), EmbedError> {
        write_labeled_csv(writer, &self.row_ids, labels, &self.values, "c")
    }
}

pub(crate) fn default_row_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Applies a fitted projection.
pub fn transform(p: &Projection, x: ArrayView2<f64>) -> Result<ReducedMatrix, ReduceError> {
    if x.ncols() != p.input_dim() {
        return Err(ReduceError::DimensionMismatch {
            expected: p.input_dim(),
            got: x.ncols(),
        });
    }
    let centered = &x - &p.mean.view().insert_axis(Axis(0));
    Ok(ReducedMatrix {
        values: centered.dot(&p.basis),
        row_ids: default_row_ids(x.nrows()),
        reducer_tag: p.tag(),
    })
}

/// Flips each column so its largest-magnitude entry is positive (first such
/// entry on ties).
pub(crate) fn fix_signs(basis: &mut Array2<f64>) {
    for mut col in basis.axis_iter_mut(Axis(1)) {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Centers `x` and returns `(centered, mean)`.
pub(crate) fn center(x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mean = crate::linalg::column_means(x);
    let centered = &x - &mean.view().insert_axis(Axis(0));
    (centered, mean)
}

/// Orthonormal basis (columns, `d × m`) of the row space of a centered
/// matrix, from the eigenvectors of its Gram matrix. Used when `d > n` so
/// the work scales with `n` rather than `d`.
pub(crate) fn row_space_basis(centered: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let gram = centered.dot(&centered.t());
    let (vals, vecs) = crate::linalg::symmetric_eigen(gram.view());
    let tol = vals.get(0).copied().unwrap_or(0.0).max(0.0) * 1e-12;
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > tol && vals[i] > 0.0).collect();
    let mut basis = Array2::zeros((centered.ncols(), keep.len()));
    let mut kept_vals = Vec::with_capacity(keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let col = centered.t().dot(&vecs.column(i)) / vals[i].sqrt();
        basis.column_mut(j).assign(&col);
        kept_vals.push(vals[i]);
    }
    (basis, kept_vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn transform_checks_dims_and_centers() {
        let p = fit_pca(array![[-1.0, -1.0], [1.0, 1.0]].view(), 1).unwrap();
        let z = transform(&p, array![[0.0, 0.0], [1.0, 1.0]].view()).unwrap();
        assert!(z.values[[0, 0]].abs() < 1e-12);
        assert!((z.values[[1, 0]] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(z.values.nrows(), 2);
        assert!(matches!(
            transform(&p, array![[1.0, 2.0, 3.0]].view()),
            Err(ReduceError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn reduced_csv_header() {
        let r = ReducedMatrix {
            values: array![[1.0, 2.0]],
            row_ids: vec!["a.B.c".into()],
            reducer_tag: "pca(r=2)".into(),
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf, &["ID".into()]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "test_id,label,c0,c1\na.B.c,ID,1,2\n");
    }
}
