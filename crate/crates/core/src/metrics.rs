//! Classifier scoring: confusion matrices, per-class and macro F1, flakiness
//! detection capacity (FDC), and the consistency / discriminancy indices used
//! to compare two metrics over a set of evaluation outcomes.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("actual ({actual}) and predicted ({predicted}) lengths differ")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("no labels to score")]
    Empty,
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("input category entropy is zero (all actual labels are one class)")]
    ZeroInputEntropy,
    #[error("need at least two outcomes, got {0}")]
    TooFewOutcomes(usize),
    #[error("no outcome pair is strictly ordered by both metrics")]
    NoOrderedPairs,
}

/// Rows are actual categories, columns predicted categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let n: u64 = counts.iter().flatten().sum();
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        assert!(counts.iter().all(|r| r.len() == counts.len()), "confusion matrix must be square");
        Ok(ConfusionMatrix { counts, n })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let c = self.n_classes();
        (0..c).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Applies the same class relabeling to rows and columns: class `i`
    /// becomes class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ConfusionMatrix {
        let c = self.n_classes();
        let mut counts = vec![vec![0; c]; c];
        for i in 0..c {
            for j in 0..c {
                counts[perm[i]][perm[j]] = self.counts[i][j];
            }
        }
        ConfusionMatrix { counts, n: self.n }
    }
}

/// Tallies `(actual, predicted)` pairs over class codes `0..n_classes`.
pub fn confusion(actual: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&a, &p) in actual.iter().zip(predicted) {
        for label in [a, p] {
            if label >= n_classes {
                return Err(MetricsError::LabelOutOfRange { label, n_classes });
            }
        }
        counts[a][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        n: actual.len() as u64,
    })
}

/// Per-class F1 and the macro mean over classes seen in actual or predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
    pub support: Vec<u64>,
}

pub fn macro_f1(cm: &ConfusionMatrix) -> F1Scores {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let c = cm.n_classes();
    let mut per_class = vec![0.0; c];
    let mut present = 0usize;
    let mut sum = 0.0;
    for k in 0..c {
        let tp = cm.counts[k][k] as f64;
        let f1 = if rows[k] == 0 && cols[k] == 0 {
            0.0
        } else {
            // 2PR/(P+R) reduces to 2tp / (actual + predicted)
            2.0 * tp / (rows[k] + cols[k]) as f64
        };
        per_class[k] = f1;
        if rows[k] > 0 || cols[k] > 0 {
            present += 1;
            sum += f1;
        }
    }
    F1Scores {
        per_class,
        macro_f1: if present > 0 { sum / present as f64 } else { 0.0 },
        support: rows,
    }
}

/// `(H(c_in), I(c_in; c_out))` with logarithms in the given base and the
/// convention `0 · log 0 = 0`.
pub fn entropy_and_mutual_information(cm: &ConfusionMatrix, base: f64) -> (f64, f64) {
    let n = cm.n as f64;
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let ln_base = base.ln();
    let h_in: f64 = rows
        .iter()
        .filter(|&&r| r > 0)
        .map(|&r| {
            let p = r as f64 / n;
            -p * p.ln() / ln_base
        })
        .sum();
    let mut mi = 0.0;
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            // p(i,j) / (p(i) p(j)) = count · n / (row_i · col_j)
            let pij = count as f64 / n;
            let ratio = count as f64 * n / (rows[i] as f64 * cols[j] as f64);
            mi += pij * ratio.ln() / ln_base;
        }
    }
    (h_in, mi)
}

/// Flakiness detection capacity `I(c_in; c_out) / H(c_in)` in base 2, clamped
/// to `[0, 1]` against round-off.
pub fn fdc(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    fdc_in_base(cm, 2.0)
}

pub fn fdc_in_base(cm: &ConfusionMatrix, base: f64) -> Result<f64, MetricsError> {
    let (h, i) = entropy_and_mutual_information(cm, base);
    if h <= 0.0 {
        return Err(MetricsError::ZeroInputEntropy);
    }
    Ok((i / h).clamp(0.0, 1.0))
}

/// Scores for one evaluation: per-class F1 keyed by class name, macro F1, FDC,
/// support and the confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub class_names: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub fdc: f64,
    pub support: Vec<u64>,
    pub confusion: ConfusionMatrix,
}

impl MetricReport {
    pub fn from_confusion(cm: ConfusionMatrix, class_names: &[String]) -> Result<Self, MetricsError> {
        assert_eq!(class_names.len(), cm.n_classes(), "one name per class");
        let f1 = macro_f1(&cm);
        let fdc = fdc(&cm)?;
        Ok(MetricReport {
            class_names: class_names.to_vec(),
            per_class_f1: f1.per_class,
            macro_f1: f1.macro_f1,
            fdc,
            support: f1.support,
            confusion: cm,
        })
    }

    pub fn evaluate(actual: &[usize], predicted: &[usize], class_names: &[String]) -> Result<Self, MetricsError> {
        let cm = confusion(actual, predicted, class_names.len())?;
        Self::from_confusion(cm, class_names)
    }

    pub fn pair(&self) -> MetricPair {
        MetricPair {
            fdc: self.fdc,
            f1: self.macro_f1,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MetricReportJson {
    per_class_f1: IndexMap<String, f64>,
    macro_f1: f64,
    fdc: f64,
    support: IndexMap<String, u64>,
    confusion_matrix: Vec<Vec<u64>>,
}

impl Serialize for MetricReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let names = self.class_names.iter().cloned();
        MetricReportJson {
            per_class_f1: names.clone().zip(self.per_class_f1.iter().copied()).collect(),
            macro_f1: self.macro_f1,
            fdc: self.fdc,
            support: names.zip(self.support.iter().copied()).collect(),
            confusion_matrix: self.confusion.counts.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MetricReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = MetricReportJson::deserialize(d)?;
        let confusion = ConfusionMatrix::from_counts(raw.confusion_matrix).map_err(serde::de::Error::custom)?;
        Ok(MetricReport {
            class_names: raw.per_class_f1.keys().cloned().collect(),
            per_class_f1: raw.per_class_f1.values().copied().collect(),
            macro_f1: raw.macro_f1,
            fdc: raw.fdc,
            support: raw.support.values().copied().collect(),
            confusion,
        })
    }
}

/// One evaluation outcome scored by both metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub fdc: f64,
    pub f1: f64,
}

fn check_outcomes(f: &[f64], g: &[f64]) -> Result<(), MetricsError> {
    if f.len() != g.len() {
        return Err(MetricsError::LengthMismatch {
            actual: f.len(),
            predicted: g.len(),
        });
    }
    if f.len() < 2 {
        return Err(MetricsError::TooFewOutcomes(f.len()));
    }
    Ok(())
}

// -1, 0, +1 with differences within epsilon counted as ties.
fn cmp_eps(a: f64, b: f64, epsilon: f64) -> i8 {
    let d = a - b;
    if d.abs() <= epsilon {
        0
    } else if d > 0.0 {
        1
    } else {
        -1
    }
}

/// Pair counts behind the consistency index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyCounts {
    /// Pairs both metrics order the same way.
    pub agree: usize,
    /// Pairs the metrics order oppositely.
    pub disagree: usize,
}

pub fn consistency_counts(f: &[f64], g: &[f64], epsilon: f64) -> Result<ConsistencyCounts, MetricsError> {
    check_outcomes(f, g)?;
    let mut counts = ConsistencyCounts { agree: 0, disagree: 0 };
    for a in 0..f.len() {
        for b in a + 1..f.len() {
            match cmp_eps(f[a], f[b], epsilon) * cmp_eps(g[a], g[b], epsilon) {
                1 => counts.agree += 1,
                -1 => counts.disagree += 1,
                _ => {}
            }
        }
    }
    Ok(counts)
}

/// Degree of consistency `|R| / (|R| + |S|)` of metric `f` with metric `g`
/// over all unordered outcome pairs; pairs tied (within `epsilon`) under either
/// metric count in neither set.
pub fn consistency_index(f: &[f64], g: &[f64], epsilon: f64) -> Result<f64, MetricsError> {
    let c = consistency_counts(f, g, epsilon)?;
    let total = c.agree + c.disagree;
    if total == 0 {
        return Err(MetricsError::NoOrderedPairs);
    }
    Ok(c.agree as f64 / total as f64)
}

/// Degree of discriminancy `|P| / |Q|`: `P` holds pairs `f` separates while
/// `g` ties, `Q` pairs `g` separates while `f` ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discriminancy {
    pub p: usize,
    pub q: usize,
}

impl Discriminancy {
    /// `|P| / |Q|`, or `+∞` when `Q` is empty.
    pub fn value(&self) -> f64 {
        if self.q == 0 {
            f64::INFINITY
        } else {
            self.p as f64 / self.q as f64
        }
    }

    /// `Q` was empty and [`Self::value`] is the infinity sentinel.
    pub fn q_empty(&self) -> bool {
        self.q == 0
    }
}

pub fn discriminancy_index(f: &[f64], g: &[f64], epsilon: f64) -> Result<Discriminancy, MetricsError> {
    check_outcomes(f, g)?;
    let mut d = Discriminancy { p: 0, q: 0 };
    for a in 0..f.len() {
        for b in a + 1..f.len() {
            let f_tie = cmp_eps(f[a], f[b], epsilon) == 0;
            let g_tie = cmp_eps(g[a], g[b], epsilon) == 0;
            match (f_tie, g_tie) {
                (false, true) => d.p += 1,
                (true, false) => d.q += 1,
                _ => {}
            }
        }
    }
    Ok(d)
}

/// Splits outcome pairs into FDC (`f`) and macro-F1 (`g`) series.
pub fn split_pairs(pairs: &[MetricPair]) -> (Vec<f64>, Vec<f64>) {
    pairs.iter().map(|p| (p.fdc, p.f1)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn confusion_cases() {
        assert_eq!(confusion(&[0, 0], &[0, 0], 2).unwrap().counts, vec![vec![2, 0], vec![0, 0]]);
        assert_eq!(confusion(&[0, 1], &[1, 0], 2).unwrap().counts, vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(confusion(&[], &[], 2).unwrap_err(), MetricsError::Empty);
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[0], &[5], 2), Err(MetricsError::LabelOutOfRange { label: 5, .. })));
    }

    #[test]
    fn f1_hand_values() {
        let perfect = macro_f1(&cm(&[&[5, 0], &[0, 5]]));
        assert_eq!(perfect.per_class, vec![1.0, 1.0]);
        assert_eq!(perfect.macro_f1, 1.0);

        // class0: P = 3/5, R = 3/4 ; class1: P = 2/3, R = 2/4
        let s = macro_f1(&cm(&[&[3, 1], &[2, 2]]));
        assert!((s.per_class[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.per_class[1] - 4.0 / 7.0).abs() < 1e-12);
        assert!((s.macro_f1 - (2.0 / 3.0 + 4.0 / 7.0) / 2.0).abs() < 1e-12);

        let constant = macro_f1(&cm(&[&[5, 0], &[5, 0]]));
        assert!((constant.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_excluded_from_macro() {
        let s = macro_f1(&cm(&[&[2, 0, 0], &[0, 2, 0], &[0, 0, 0]]));
        assert_eq!(s.per_class[2], 0.0);
        assert_eq!(s.macro_f1, 1.0);
    }

    #[test]
    fn fdc_cases() {
        assert_eq!(fdc(&cm(&[&[5, 0], &[0, 5]])).unwrap(), 1.0);
        assert_eq!(fdc(&cm(&[&[5, 0], &[5, 0]])).unwrap(), 0.0);
        assert!((fdc(&cm(&[&[3, 1], &[2, 2]])).unwrap() - 0.0488).abs() < 1e-4);
        assert_eq!(fdc(&cm(&[&[3, 1], &[0, 0]])).unwrap_err(), MetricsError::ZeroInputEntropy);
    }

    #[test]
    fn consistency_examples() {
        let f = [0.1, 0.2, 0.3];
        assert!((consistency_index(&f, &[0.1, 0.2, 0.15], 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(consistency_index(&f, &f, 0.0).unwrap(), 1.0);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert_eq!(consistency_index(&f, &neg, 0.0).unwrap(), 0.0);
        assert_eq!(consistency_index(&[0.5, 0.5], &[0.1, 0.2], 0.0).unwrap_err(), MetricsError::NoOrderedPairs);
        assert_eq!(consistency_index(&[0.5], &[0.1], 0.0).unwrap_err(), MetricsError::TooFewOutcomes(1));
    }

    #[test]
    fn discriminancy_examples() {
        let d = discriminancy_index(&[0.1, 0.2, 0.2], &[0.5, 0.5, 0.6], 0.0).unwrap();
        assert_eq!(d, Discriminancy { p: 1, q: 1 });
        assert_eq!(d.value(), 1.0);
        let inc = [0.1, 0.2, 0.3, 0.4];
        let flat = [0.5; 4];
        let d = discriminancy_index(&inc, &flat, 0.0).unwrap();
        assert!(d.q_empty() && d.value().is_infinite());
        assert_eq!(discriminancy_index(&flat, &inc, 0.0).unwrap().value(), 0.0);
    }

    #[test]
    fn epsilon_merges_close_values() {
        let d = discriminancy_index(&[0.100, 0.104], &[0.3, 0.4], 0.005).unwrap();
        assert_eq!(d, Discriminancy { p: 0, q: 1 });
    }

    #[test]
    fn report_json_keys_by_name() {
        let names: Vec<String> = vec!["ID".into(), "OD".into()];
        let r = MetricReport::evaluate(&[0, 0, 1, 1], &[0, 1, 1, 1], &names).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["per_class_f1"]["ID"].is_number());
        assert_eq!(json["support"]["OD"], 2);
        assert_eq!(json["confusion_matrix"][0][1], 1);
        let back: MetricReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }
}
