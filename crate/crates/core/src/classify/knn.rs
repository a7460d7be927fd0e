use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_query, check_training, owned, ClassifyError};
use crate::linalg::squared_distance;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
}

/// Stored training set; KNN has no fitting beyond validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub train_x: Array2<f64>,
    pub train_y: Vec<usize>,
    pub class_codes: Vec<usize>,
}

impl KnnModel {
    pub fn fit(x: ArrayView2<f64>, y: &[usize], cfg: &KnnConfig) -> Result<Self, ClassifyError> {
        let class_codes = check_training(x, y)?;
        check_k(cfg.k, y.len())?;
        Ok(KnnModel {
            k: cfg.k,
            train_x: owned(x),
            train_y: y.to_vec(),
            class_codes,
        })
    }

    pub fn predict(&self, query: ArrayView2<f64>) -> Result<Vec<usize>, ClassifyError> {
        check_query(self.train_x.ncols(), query)?;
        Ok((0..query.nrows())
            .into_par_iter()
            .map(|i| vote(self.train_x.view(), &self.train_y, query.row(i).to_owned(), self.k))
            .collect())
    }
}

fn check_k(k: usize, n: usize) -> Result<(), ClassifyError> {
    if k == 0 {
        return Err(ClassifyError::InvalidK);
    }
    if k > n {
        return Err(ClassifyError::KTooLarge { k, n });
    }
    Ok(())
}

fn vote(train_x: ArrayView2<f64>, train_y: &[usize], q: Array1<f64>, k: usize) -> usize {
    let mut dist: Vec<(f64, usize)> = train_x
        .outer_iter()
        .enumerate()
        .map(|(i, row)| (squared_distance(row, q.view()), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_distance);
        dist.truncate(k);
    }
    dist.sort_by(by_distance);

    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &(_, i) in &dist {
        match counts.iter_mut().find(|(c, _)| *c == train_y[i]) {
            Some(entry) => entry.1 += 1,
            None => counts.push((train_y[i], 1)),
        }
    }
    // `counts` is in order of first appearance, i.e. nearest neighbor first,
    // so the first class reaching the top count wins ties.
    let top = counts.iter().map(|&(_, n)| n).max().expect("k >= 1");
    counts.iter().find(|&&(_, n)| n == top).expect("top exists").0
}

/// Majority vote among the `k` Euclidean-nearest training rows. Vote ties go
/// to the class of the nearer neighbor; distance ties to the lower training
/// index.
pub fn knn_predict(
    train_x: ArrayView2<f64>,
    train_y: &[usize],
    query: ArrayView2<f64>,
    cfg: &KnnConfig,
) -> Result<Vec<usize>, ClassifyError> {
    KnnModel::fit(train_x, train_y, cfg)?.predict(query)
}
