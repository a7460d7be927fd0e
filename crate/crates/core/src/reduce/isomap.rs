use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};

use super::{default_row_ids, fix_signs, ReduceError, ReducedMatrix};
use crate::linalg::{pairwise_squared_distances, symmetric_eigen};

/// Symmetrized k-nearest-neighbor graph as adjacency lists of
/// `(neighbor, euclidean distance)`. Distance ties go to the lower index.
pub fn knn_graph(x: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<(usize, f64)>>, ReduceError> {
    let n = x.nrows();
    if k == 0 || k >= n {
        return Err(ReduceError::InvalidNeighbors);
    }
    let d2 = pairwise_squared_distances(x);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d2[[i, a]].total_cmp(&d2[[i, b]]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            let w = d2[[i, j]].sqrt();
            if !adj[i].iter().any(|&(v, _)| v == j) {
                adj[i].push((j, w));
            }
            if !adj[j].iter().any(|&(v, _)| v == i) {
                adj[j].push((i, w));
            }
        }
    }
    Ok(adj)
}

fn component_count(adj: &[Vec<(usize, f64)>]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// All-pairs shortest-path distances over the neighbor graph (Dijkstra per source).
pub fn geodesic_distances(adj: &[Vec<(usize, f64)>]) -> Result<Array2<f64>, ReduceError> {
    let components = component_count(adj);
    if components > 1 {
        return Err(ReduceError::DisconnectedGraph(components));
    }
    let n = adj.len();
    let mut out = Array2::from_elem((n, n), f64::INFINITY);
    for s in 0..n {
        let mut heap = BinaryHeap::new();
        out[[s, s]] = 0.0;
        heap.push(HeapItem(0.0, s));
        while let Some(HeapItem(dist, u)) = heap.pop() {
            if dist > out[[s, u]] {
                continue;
            }
            for &(v, w) in &adj[u] {
                let cand = dist + w;
                if cand < out[[s, v]] {
                    out[[s, v]] = cand;
                    heap.push(HeapItem(cand, v));
                }
            }
        }
    }
    Ok(out)
}

/// Classical MDS on the geodesic distances of the symmetrized k-NN graph.
pub fn fit_isomap(x: ArrayView2<f64>, k_neighbors: usize, r: usize) -> Result<ReducedMatrix, ReduceError> {
    let n = x.nrows();
    if r == 0 || r >= n {
        return Err(ReduceError::InvalidRank { requested: r, max: n.saturating_sub(1) });
    }
    let adj = knn_graph(x, k_neighbors)?;
    let geo = geodesic_distances(&adj)?;

    // B = -1/2 J D² J
    let sq = geo.mapv(|v| v * v);
    let row_means = sq.mean_axis(ndarray::Axis(1)).expect("n > 0");
    let grand = row_means.mean().expect("n > 0");
    let b = Array2::from_shape_fn((n, n), |(i, j)| -0.5 * (sq[[i, j]] - row_means[i] - row_means[j] + grand));
    let (vals, vecs) = symmetric_eigen(b.view());
    let mut coords = Array2::zeros((n, r));
    for j in 0..r {
        let scale = vals[j].max(0.0).sqrt();
        for i in 0..n {
            coords[[i, j]] = vecs[[i, j]] * scale;
        }
    }
    fix_signs(&mut coords);
    Ok(ReducedMatrix {
        values: coords,
        row_ids: default_row_ids(n),
        reducer_tag: format!("isomap(k={k_neighbors},r={r})"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn line_keeps_order() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| if j == 0 { i as f64 } else { 0.5 * i as f64 });
        let z = fit_isomap(x.view(), 2, 1).unwrap();
        let c = z.values.column(0);
        let inc = (1..10).all(|i| c[i] > c[i - 1]);
        let dec = (1..10).all(|i| c[i] < c[i - 1]);
        assert!(inc || dec);
    }

    #[test]
    fn far_pairs_disconnected() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [100.0, 100.0], [100.1, 100.0]];
        assert_eq!(fit_isomap(x.view(), 1, 1).unwrap_err(), ReduceError::DisconnectedGraph(2));
    }

    #[test]
    fn quarter_arc_unrolls_evenly() {
        // 12 points at equal angular steps; geodesic = sum of equal chords.
        let n = 12;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let t = std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64;
            if j == 0 { t.cos() } else { t.sin() }
        });
        let z = fit_isomap(x.view(), 2, 1).unwrap();
        let c = z.values.column(0);
        let gaps: Vec<f64> = (1..n).map(|i| (c[i] - c[i - 1]).abs()).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(gaps.iter().all(|g| (g - mean).abs() <= 0.1 * mean), "{gaps:?}");
    }
}
