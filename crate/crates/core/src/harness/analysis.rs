use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentConfig, ExperimentData, HarnessError, ReducerSpec};
use crate::classify::{ClassifierConfig, KnnConfig};
use crate::embed::{read_labeled_csv, write_labeled_csv, LabeledRows};
use crate::metrics::{consistency_index, discriminancy_index, MetricPair};
use crate::reduce::ReducedMatrix;

/// Tie tolerance when comparing metric values in C and D.
pub const DEFAULT_EPSILON: f64 = 0.005;

/// Cross-validated KNN macro F1 per reduced embedding and `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureTable {
    pub reducers: Vec<String>,
    pub k_values: Vec<usize>,
    /// `f1[reducer][k]`.
    pub f1: Vec<Vec<f64>>,
}

impl StructureTable {
    pub fn get(&self, reducer: &str, k: usize) -> Option<f64> {
        let r = self.reducers.iter().position(|n| n == reducer)?;
        let c = self.k_values.iter().position(|&v| v == k)?;
        Some(self.f1[r][c])
    }

    /// Reducers as rows, one `k=..` column per neighbor count.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["reducer".to_string()];
        header.extend(self.k_values.iter().map(|k| format!("k={k}")));
        w.write_record(&header)?;
        for (name, row) in self.reducers.iter().zip(&self.f1) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs KNN at every `k` on each already-reduced data set with `folds`-fold
/// stratified CV and fold-local balancing.
pub fn knn_structure_analysis(
    reduced: &[(String, ExperimentData)],
    k_values: &[usize],
    folds: usize,
    seed: u64,
) -> Result<StructureTable, HarnessError> {
    if let Some(&k) = k_values.iter().find(|&&k| !(2..=500).contains(&k)) {
        return Err(HarnessError::Config(format!("k = {k} outside 2..=500")));
    }
    let config = ExperimentConfig {
        reducer: ReducerSpec::none(),
        classifiers: k_values.iter().map(|&k| ClassifierConfig::Knn(KnnConfig { k })).collect(),
        folds,
        seed,
        ..ExperimentConfig::default()
    };
    let mut f1 = Vec::with_capacity(reduced.len());
    for (_, data) in reduced {
        let report = run_experiment(&config, data)?;
        f1.push(report.settings.iter().map(|s| s.mean_macro_f1).collect());
    }
    Ok(StructureTable {
        reducers: reduced.iter().map(|(n, _)| n.clone()).collect(),
        k_values: k_values.to_vec(),
        f1,
    })
}

/// C and D of FDC against macro F1 for one classifier and repeat count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdRow {
    pub classifier: String,
    pub repeats: usize,
    pub outcomes: usize,
    pub consistency: f64,
    pub discriminancy_p: usize,
    pub discriminancy_q: usize,
    /// `None` when `Q` is empty (D is infinite).
    pub discriminancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdReport {
    pub epsilon: f64,
    pub folds: usize,
    pub rows: Vec<CdRow>,
    pub pairs: Vec<(String, Vec<MetricPair>)>,
}

impl CdReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["classifier", "repeats", "outcomes", "C", "P", "Q", "D"])?;
        for r in &self.rows {
            w.write_record([
                r.classifier.clone(),
                r.repeats.to_string(),
                r.outcomes.to_string(),
                format!("{:.4}", r.consistency),
                r.discriminancy_p.to_string(),
                r.discriminancy_q.to_string(),
                r.discriminancy.map_or("inf".to_string(), |d| format!("{d:.4}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Repeated shuffled 5-fold evaluation per classifier, one [`MetricPair`] per
/// fold, then consistency and discriminancy of FDC against macro F1 over the
/// first `r` repeats for each `r` in `repeat_counts`.
///
/// `base` supplies the reducer, sampler and seed; its classifier list and fold
/// count are replaced.
pub fn cd_validation(
    base: &ExperimentConfig,
    data: &ExperimentData,
    classifiers: &[ClassifierConfig],
    repeat_counts: &[usize],
    epsilon: f64,
) -> Result<CdReport, HarnessError> {
    const FOLDS: usize = 5;
    let max_repeats = repeat_counts.iter().copied().max().unwrap_or(0);
    if max_repeats == 0 {
        return Err(HarnessError::Config("repeat counts must be positive".into()));
    }
    let config = ExperimentConfig {
        classifiers: classifiers.to_vec(),
        folds: FOLDS,
        repeats: max_repeats,
        ..base.clone()
    };
    let report = run_experiment(&config, data)?;
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for setting in &report.settings {
        let name = setting.classifier.name().to_string();
        let all: Vec<MetricPair> = setting.folds.iter().map(|o| o.metrics.pair()).collect();
        for &r in repeat_counts {
            let used = &all[..(r * FOLDS).min(all.len())];
            let f: Vec<f64> = used.iter().map(|p| p.fdc).collect();
            let g: Vec<f64> = used.iter().map(|p| p.f1).collect();
            let c = consistency_index(&f, &g, epsilon)?;
            let d = discriminancy_index(&f, &g, epsilon)?;
            rows.push(CdRow {
                classifier: name.clone(),
                repeats: r,
                outcomes: used.len(),
                consistency: c,
                discriminancy_p: d.p,
                discriminancy_q: d.q,
                discriminancy: (!d.q_empty()).then(|| d.value()),
            });
        }
        pairs.push((name, all));
    }
    Ok(CdReport {
        epsilon,
        folds: FOLDS,
        rows,
        pairs,
    })
}

/// Writes a two-component projection as `test_id,label,c0,c1`.
pub fn emit_projection(reduced: &ReducedMatrix, labels: &[String], out: impl AsRef<Path>) -> Result<(), HarnessError> {
    if reduced.dim() != 2 {
        return Err(HarnessError::WrongDimensionality(reduced.dim()));
    }
    let file = BufWriter::new(File::create(out)?);
    write_labeled_csv(file, &reduced.row_ids, labels, &reduced.values, "c")?;
    Ok(())
}

pub fn read_projection(path: impl AsRef<Path>) -> Result<LabeledRows, HarnessError> {
    Ok(read_labeled_csv(BufReader::new(File::open(path)?))?)
}
