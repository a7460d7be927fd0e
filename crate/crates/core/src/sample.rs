//! Training-fold rebalancing: SMOTE oversampling followed by Tomek-link cleaning.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::squared_distance;

pub const DEFAULT_SMOTE_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Original,
    Synthetic,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("class {0} needs oversampling but has fewer than 2 samples")]
    TooFewSamples(usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("labels ({labels}) and rows ({rows}) differ in length")]
    LabelMismatch { labels: usize, rows: usize },
}

/// A rebalanced training set. Original rows come first, in input order, and
/// synthetic rows are appended after them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSet {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub provenance: Vec<Provenance>,
    /// For each synthetic row, the `(parent, neighbor)` indices it was
    /// interpolated between; `None` for original rows.
    pub parents: Vec<Option<(usize, usize)>>,
    /// Rows dropped by Tomek cleaning, as indices into the post-SMOTE set
    /// (indices below the input row count are original rows).
    pub removed: Vec<usize>,
}

impl SampledSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        class_counts(&self.y)
    }

    pub fn n_synthetic(&self) -> usize {
        self.provenance.iter().filter(|&&p| p == Provenance::Synthetic).count()
    }

    /// Debug dump: `row,label,provenance,parent,neighbor,x0..`.
    pub fn write_debug_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["row", "label", "provenance", "parent", "neighbor"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..self.x.ncols()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (i, row) in self.x.outer_iter().enumerate() {
            let (parent, nb) = match self.parents[i] {
                Some((p, q)) => (p.to_string(), q.to_string()),
                None => (String::new(), String::new()),
            };
            let prov = match self.provenance[i] {
                Provenance::Original => "ORIGINAL",
                Provenance::Synthetic => "SYNTHETIC",
            };
            let mut rec = vec![i.to_string(), self.y[i].to_string(), prov.to_string(), parent, nb];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn class_counts(y: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &c in y {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}

/// Indices of the `k` nearest rows to `i` among `candidates` (excluding `i`),
/// ties broken by lower index.
fn nearest_among(x: ArrayView2<f64>, i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let xi = x.row(i);
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (squared_distance(xi, x.row(j)), j))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, j)| j).collect()
}

/// SMOTE: every class below the majority count is topped up to it with points
/// `x + u·(x_nn − x)`, `u ~ U(0,1)`, where `x` is a uniformly drawn class member
/// and `x_nn` one of its `k` nearest same-class neighbors (`k` truncated to the
/// class size minus one).
pub fn smote(x: ArrayView2<f64>, y: &[usize], k: usize, seed: u64) -> Result<SampledSet, SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    smote_with_gap(x, y, k, &mut rng, |r| r.random::<f64>())
}

pub(crate) fn smote_with_gap<R: Rng>(
    x: ArrayView2<f64>,
    y: &[usize],
    k: usize,
    rng: &mut R,
    mut gap: impl FnMut(&mut R) -> f64,
) -> Result<SampledSet, SampleError> {
    if k == 0 {
        return Err(SampleError::InvalidK);
    }
    if y.len() != x.nrows() {
        return Err(SampleError::LabelMismatch { labels: y.len(), rows: x.nrows() });
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    let majority = members.values().map(Vec::len).max().unwrap_or(0);
    if let Some((&c, _)) = members.iter().find(|(_, m)| m.len() < majority && m.len() < 2) {
        return Err(SampleError::TooFewSamples(c));
    }

    let mut synth_rows: Vec<f64> = Vec::new();
    let mut synth_y = Vec::new();
    let mut synth_parents = Vec::new();
    for (&class, rows) in &members {
        let needed = majority - rows.len();
        if needed == 0 {
            continue;
        }
        let kk = k.min(rows.len() - 1);
        let neighbors: Vec<Vec<usize>> = rows.iter().map(|&i| nearest_among(x, i, rows, kk)).collect();
        for _ in 0..needed {
            let pick = rng.random_range(0..rows.len());
            let parent = rows[pick];
            let nb = neighbors[pick][rng.random_range(0..kk)];
            let u = gap(rng);
            let (xp, xn) = (x.row(parent), x.row(nb));
            synth_rows.extend(xp.iter().zip(xn.iter()).map(|(a, b)| a + u * (b - a)));
            synth_y.push(class);
            synth_parents.push(Some((parent, nb)));
        }
    }

    let n_synth = synth_y.len();
    let synth = Array2::from_shape_vec((n_synth, x.ncols()), synth_rows).expect("row-major shape");
    let out_x = ndarray::concatenate(Axis(0), &[x, synth.view()]).expect("same width");
    let mut out_y = y.to_vec();
    out_y.extend(synth_y);
    let mut provenance = vec![Provenance::Original; y.len()];
    provenance.extend(std::iter::repeat_n(Provenance::Synthetic, n_synth));
    let mut parents = vec![None; y.len()];
    parents.extend(synth_parents);
    Ok(SampledSet {
        x: out_x,
        y: out_y,
        provenance,
        parents,
        removed: Vec::new(),
    })
}

/// Nearest neighbor of every row (ties to the lower index).
fn nearest_neighbors(x: ArrayView2<f64>) -> Vec<usize> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let xi = x.row(i);
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = squared_distance(xi, x.row(j));
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Tomek links: mutual nearest neighbors with different labels. From each
/// link the member of the currently larger class is removed, both on a tie.
/// Returns the removed row indices in ascending order.
pub fn tomek_links(x: ArrayView2<f64>, y: &[usize]) -> Vec<usize> {
    if x.nrows() < 2 {
        return Vec::new();
    }
    let counts = class_counts(y);
    let nn = nearest_neighbors(x);
    let mut removed = Vec::new();
    for i in 0..nn.len() {
        let j = nn[i];
        if j <= i || nn[j] != i || y[i] == y[j] {
            continue;
        }
        let (ci, cj) = (counts[&y[i]], counts[&y[j]]);
        if ci >= cj {
            removed.push(i);
        }
        if cj >= ci {
            removed.push(j);
        }
    }
    removed.sort_unstable();
    removed.dedup();
    removed
}

/// SMOTE then Tomek cleaning.
pub fn balance(x: ArrayView2<f64>, y: &[usize], k: usize, seed: u64) -> Result<SampledSet, SampleError> {
    let smoted = smote(x, y, k, seed)?;
    let removed = tomek_links(smoted.x.view(), &smoted.y);
    if removed.is_empty() {
        return Ok(smoted);
    }
    let keep: Vec<usize> = (0..smoted.len()).filter(|i| removed.binary_search(i).is_err()).collect();
    Ok(SampledSet {
        x: smoted.x.select(Axis(0), &keep),
        y: keep.iter().map(|&i| smoted.y[i]).collect(),
        provenance: keep.iter().map(|&i| smoted.provenance[i]).collect(),
        parents: keep.iter().map(|&i| smoted.parents[i]).collect(),
        removed,
    })
}
