use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_low, check_query, check_training, ClassifyError};

const FEATURE_THRESHOLD: f64 = 1e-7;
const IMPURITY_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Entropy,
    LogLoss,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Gini, Criterion::Entropy, Criterion::LogLoss];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Gini => "gini",
            Criterion::Entropy => "entropy",
            Criterion::LogLoss => "log_loss",
        }
    }

    /// Impurity of weighted class counts summing to `total`.
    pub fn impurity(self, counts: &[f64], total: f64) -> f64 {
        if total <= 0.0 {
            return 0.0;
        }
        match self {
            Criterion::Gini => 1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>(),
            Criterion::Entropy | Criterion::LogLoss => -counts
                .iter()
                .filter(|&&c| c > 0.0)
                .map(|&c| {
                    let p = c / total;
                    p * p.ln()
                })
                .sum::<f64>(),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gini" => Ok(Criterion::Gini),
            "entropy" => Ok(Criterion::Entropy),
            "log_loss" | "logloss" => Ok(Criterion::LogLoss),
            other => Err(format!("unknown criterion {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub max_depth: usize,
    pub min_impurity_decrease: f64,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub n_estimators: usize,
    pub min_weight_fraction_leaf: f64,
    pub max_leaf_nodes: usize,
    pub criterion: Criterion,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            max_depth: 200,
            min_impurity_decrease: 0.0,
            min_samples_leaf: 1,
            min_samples_split: 2,
            n_estimators: 100,
            min_weight_fraction_leaf: 0.0,
            max_leaf_nodes: 400,
            criterion: Criterion::Gini,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// Fields outside the tuning box, described one per entry.
    pub fn tuning_bound_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut int = |name: &str, v: usize, lo: usize, hi: usize| {
            if v < lo || v > hi {
                out.push(format!("{name} = {v} outside {lo}..={hi}"));
            }
        };
        int("max_depth", self.max_depth, 1, 200);
        int("min_samples_leaf", self.min_samples_leaf, 1, 200);
        int("min_samples_split", self.min_samples_split, 2, 400);
        int("n_estimators", self.n_estimators, 100, 200);
        int("max_leaf_nodes", self.max_leaf_nodes, 2, 400);
        if !(0.0..=0.5).contains(&self.min_impurity_decrease) {
            out.push(format!("min_impurity_decrease = {} outside 0..=0.5", self.min_impurity_decrease));
        }
        if !(0.0..=0.05).contains(&self.min_weight_fraction_leaf) {
            out.push(format!("min_weight_fraction_leaf = {} outside 0..=0.05", self.min_weight_fraction_leaf));
        }
        out
    }

    pub fn check_tuning_bounds(&self) -> Result<(), ClassifyError> {
        match self.tuning_bound_violations().into_iter().next() {
            Some(v) => Err(ClassifyError::ConfigOutOfBounds(v)),
            None => Ok(()),
        }
    }

    // Values that leave the tree undefined, as opposed to merely untuned.
    fn check_valid(&self) -> Result<(), ClassifyError> {
        let bad = |msg: String| Err(ClassifyError::ConfigOutOfBounds(msg));
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2".into());
        }
        if self.n_estimators == 0 {
            return bad("n_estimators must be at least 1".into());
        }
        if self.max_leaf_nodes < 2 {
            return bad("max_leaf_nodes must be at least 2".into());
        }
        if !(self.min_impurity_decrease >= 0.0 && self.min_impurity_decrease.is_finite()) {
            return bad(format!("min_impurity_decrease = {}", self.min_impurity_decrease));
        }
        if !(0.0..=0.5).contains(&self.min_weight_fraction_leaf) {
            return bad(format!("min_weight_fraction_leaf = {} outside 0..=0.5", self.min_weight_fraction_leaf));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        /// Bootstrap-weighted class counts, indexed like `class_codes`.
        counts: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Class index (into `class_codes`) of the leaf reached by `row`.
    pub fn predict_index(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { counts } => return argmax_low(counts),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub class_codes: Vec<usize>,
    pub trees: Vec<Tree>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    improvement: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

struct Pending {
    node: usize,
    depth: usize,
    key: u64,
    split: SplitChoice,
    order: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // largest improvement first, then creation order
    fn cmp(&self, other: &Self) -> Ordering {
        self.split
            .improvement
            .total_cmp(&other.split.improvement)
            .then_with(|| other.order.cmp(&self.order))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    weight: &'a [f64],
    n_classes: usize,
    cfg: &'a ForestConfig,
    max_features: usize,
    total_weight: f64,
    min_weight_leaf: f64,
    tree_seed: u64,
}

impl Builder<'_> {
    fn counts(&self, samples: &[usize]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; self.n_classes];
        for &s in samples {
            counts[self.y[s]] += self.weight[s];
        }
        let total = counts.iter().sum();
        (counts, total)
    }

    fn best_split(&self, samples: &[usize], counts: &[f64], total: f64, impurity: f64, key: u64) -> Option<SplitChoice> {
        let crit = self.cfg.criterion;
        let min_leaf = self.cfg.min_samples_leaf;
        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(self.tree_seed ^ key)));

        let mut best: Option<(usize, usize, f64, f64)> = None; // feature, position, proxy, threshold
        let mut best_order: Vec<usize> = Vec::new();
        let mut visited = 0;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        for &f in &features {
            if visited >= self.max_features && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(samples.iter().map(|&s| (self.x[[s, f]], s)));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if sorted[sorted.len() - 1].0 <= sorted[0].0 + FEATURE_THRESHOLD {
                continue;
            }
            visited += 1;
            let mut left = vec![0.0; self.n_classes];
            let mut w_left = 0.0;
            let m = sorted.len();
            let mut improved = false;
            for p in 1..m {
                let (_, s) = sorted[p - 1];
                left[self.y[s]] += self.weight[s];
                w_left += self.weight[s];
                if sorted[p].0 <= sorted[p - 1].0 + FEATURE_THRESHOLD {
                    continue;
                }
                if p < min_leaf || m - p < min_leaf {
                    continue;
                }
                let w_right = total - w_left;
                if w_left < self.min_weight_leaf || w_right < self.min_weight_leaf {
                    continue;
                }
                let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let proxy = -(w_left * crit.impurity(&left, w_left) + w_right * crit.impurity(&right, w_right));
                if best.is_none_or(|b| proxy > b.2) {
                    let (a, b) = (sorted[p - 1].0, sorted[p].0);
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((f, p, proxy, threshold));
                    improved = true;
                }
            }
            if improved {
                best_order = sorted.iter().map(|&(_, s)| s).collect();
            }
        }
        let (feature, pos, _, threshold) = best?;
        let (l, r) = best_order.split_at(pos);
        let (lc, lw) = self.counts(l);
        let (rc, rw) = self.counts(r);
        let improvement = (total / self.total_weight)
            * (impurity - (rw / total) * crit.impurity(&rc, rw) - (lw / total) * crit.impurity(&lc, lw));
        Some(SplitChoice {
            feature,
            threshold,
            improvement,
            left: l.to_vec(),
            right: r.to_vec(),
        })
    }

    fn evaluate(&self, samples: &[usize], depth: usize, key: u64) -> (Vec<f64>, Option<SplitChoice>) {
        let (counts, total) = self.counts(samples);
        let impurity = self.cfg.criterion.impurity(&counts, total);
        let n = samples.len();
        let leaf = depth >= self.cfg.max_depth
            || n < self.cfg.min_samples_split
            || n < 2 * self.cfg.min_samples_leaf
            || total < 2.0 * self.min_weight_leaf
            || impurity <= IMPURITY_EPS;
        if leaf {
            return (counts, None);
        }
        let split = self
            .best_split(samples, &counts, total, impurity, key)
            .filter(|s| s.improvement + IMPURITY_EPS >= self.cfg.min_impurity_decrease);
        (counts, split)
    }

    /// Best-first growth under the leaf budget. Each node's feature order is
    /// seeded from its position in the tree, so when the budget does not bind
    /// the result is the same tree depth-first growth would produce.
    fn build(&self, root_samples: Vec<usize>) -> Tree {
        let mut nodes = Vec::new();
        let mut heap = BinaryHeap::new();
        let mut order = 0;
        let (counts, split) = self.evaluate(&root_samples, 0, 1);
        nodes.push(TreeNode::Leaf { counts });
        if let Some(split) = split {
            heap.push(Pending {
                node: 0,
                depth: 0,
                key: 1,
                split,
                order,
            });
        }
        let mut leaves = 1;
        while leaves < self.cfg.max_leaf_nodes {
            let Some(p) = heap.pop() else { break };
            let mut children = [0usize; 2];
            for (side, samples) in [&p.split.left, &p.split.right].into_iter().enumerate() {
                let key = splitmix64(p.key.wrapping_mul(2).wrapping_add(side as u64));
                let (counts, split) = self.evaluate(samples, p.depth + 1, key);
                children[side] = nodes.len();
                nodes.push(TreeNode::Leaf { counts });
                if let Some(split) = split {
                    order += 1;
                    heap.push(Pending {
                        node: children[side],
                        depth: p.depth + 1,
                        key,
                        split,
                        order,
                    });
                }
            }
            nodes[p.node] = TreeNode::Split {
                feature: p.split.feature,
                threshold: p.split.threshold,
                left: children[0],
                right: children[1],
            };
            leaves += 1;
        }
        Tree { nodes }
    }
}

/// Random forest of CART trees on bootstrap samples with `⌊√d⌋` candidate
/// features per node.
pub fn forest_fit(x: ArrayView2<f64>, y: &[usize], cfg: &ForestConfig) -> Result<ForestModel, ClassifyError> {
    let class_codes = check_training(x, y)?;
    cfg.check_valid()?;
    for v in cfg.tuning_bound_violations() {
        log::warn!("forest config outside the tuning box: {v}");
    }
    let (n, d) = x.dim();
    let y_idx: Vec<usize> = y
        .iter()
        .map(|c| class_codes.binary_search(c).expect("code collected from y"))
        .collect();
    let max_features = ((d as f64).sqrt().floor() as usize).max(1);

    let trees = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let mut weight = vec![0.0; n];
            for _ in 0..n {
                weight[rng.random_range(0..n)] += 1.0;
            }
            let tree_seed = rng.next_u64();
            let samples: Vec<usize> = (0..n).filter(|&i| weight[i] > 0.0).collect();
            let builder = Builder {
                x,
                y: &y_idx,
                weight: &weight,
                n_classes: class_codes.len(),
                cfg,
                max_features,
                total_weight: n as f64,
                min_weight_leaf: cfg.min_weight_fraction_leaf * n as f64,
                tree_seed,
            };
            builder.build(samples)
        })
        .collect();
    Ok(ForestModel {
        config: cfg.clone(),
        n_features: d,
        class_codes,
        trees,
    })
}

/// Plurality vote across trees; ties go to the lower class code.
pub fn forest_predict(model: &ForestModel, x: ArrayView2<f64>) -> Result<Vec<usize>, ClassifyError> {
    check_query(model.n_features, x)?;
    let k = model.class_codes.len();
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i).to_vec();
            let mut votes = vec![0usize; k];
            for tree in &model.trees {
                votes[tree.predict_index(&row)] += 1;
            }
            model.class_codes[argmax_low(&votes)]
        })
        .collect())
}
