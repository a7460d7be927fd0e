//! Classifiers behind a common fit/predict contract: k-nearest neighbors,
//! one-vs-rest kernel SVM, and a random forest of CART trees.
//!
//! Labels are class codes (`usize`). Every vote or argmax tie resolves to the
//! lower class code.

mod forest;
mod knn;
mod svm;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{forest_fit, forest_predict, Criterion, ForestConfig, ForestModel, Tree, TreeNode};
pub use knn::{knn_predict, KnnConfig, KnnModel};
pub use svm::{gram_matrix, svm_decision_function, svm_fit, svm_predict, BinarySvm, Kernel, SvmConfig, SvmModel};

/// On-disk model format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("k = {k} exceeds the {n} training samples")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("training data holds a single class")]
    SingleClass,
    #[error("training data is empty")]
    EmptyTraining,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("labels ({labels}) and rows ({rows}) differ in length")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("configuration out of bounds: {0}")]
    ConfigOutOfBounds(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One classifier family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassifierConfig {
    Knn(KnnConfig),
    Svm(SvmConfig),
    Forest(ForestConfig),
}

impl ClassifierConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierConfig::Knn(_) => "KNN",
            ClassifierConfig::Svm(_) => "SVM",
            ClassifierConfig::Forest(_) => "RF",
        }
    }
}

/// A fitted classifier. Predictions only ever contain codes from
/// [`TrainedModel::class_codes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrainedModel {
    Knn(KnnModel),
    Svm(SvmModel),
    Forest(ForestModel),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: TrainedModel,
}

impl TrainedModel {
    pub fn class_codes(&self) -> &[usize] {
        match self {
            TrainedModel::Knn(m) => &m.class_codes,
            TrainedModel::Svm(m) => &m.class_codes,
            TrainedModel::Forest(m) => &m.class_codes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Knn(m) => m.train_x.ncols(),
            TrainedModel::Svm(m) => m.n_features,
            TrainedModel::Forest(m) => m.n_features,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>, ClassifyError> {
        match self {
            TrainedModel::Knn(m) => m.predict(x),
            TrainedModel::Svm(m) => svm_predict(m, x),
            TrainedModel::Forest(m) => forest_predict(m, x),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifyError> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(BufWriter::new(File::create(path)?), &file)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifyError> {
        let file: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let version = file.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(ClassifyError::UnsupportedVersion(version));
        }
        let file: ModelFile = serde_json::from_value(file)?;
        Ok(file.model)
    }
}

/// Fits the configured classifier.
pub fn fit(x: ArrayView2<f64>, y: &[usize], config: &ClassifierConfig) -> Result<TrainedModel, ClassifyError> {
    match config {
        ClassifierConfig::Knn(cfg) => KnnModel::fit(x, y, cfg).map(TrainedModel::Knn),
        ClassifierConfig::Svm(cfg) => svm_fit(x, y, cfg).map(TrainedModel::Svm),
        ClassifierConfig::Forest(cfg) => forest_fit(x, y, cfg).map(TrainedModel::Forest),
    }
}

pub(crate) fn check_training(x: ArrayView2<f64>, y: &[usize]) -> Result<Vec<usize>, ClassifyError> {
    if y.len() != x.nrows() {
        return Err(ClassifyError::LabelMismatch {
            labels: y.len(),
            rows: x.nrows(),
        });
    }
    if y.is_empty() {
        return Err(ClassifyError::EmptyTraining);
    }
    Ok(y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
}

pub(crate) fn check_query(expected: usize, x: ArrayView2<f64>) -> Result<(), ClassifyError> {
    if x.ncols() != expected && x.nrows() > 0 {
        return Err(ClassifyError::DimensionMismatch {
            expected,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax_low<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn owned(x: ArrayView2<f64>) -> Array2<f64> {
    x.as_standard_layout().into_owned()
}
