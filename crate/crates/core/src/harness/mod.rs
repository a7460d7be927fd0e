//! Experiment orchestration: stratified cross-validation with fold-local
//! rebalancing, hyperparameter sweeps, forest tuning, the KNN structure
//! table, consistency/discriminancy validation and projection export.

mod analysis;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{self, ClassifierConfig, ClassifyError, ForestConfig};
use crate::corpus::{CategoryLabel, Corpus, FetchError, ManifestError};
use crate::embed::{self, EmbedError, EmbeddingMatrix};
use crate::javalex::ExtractError;
use crate::metrics::{MetricReport, MetricsError};
use crate::reduce::{self, ReduceError};
use crate::sample::{self, SampleError};
use crate::tune::{self, Observation, OptimizeOptions, ParamSpace, TuneError};

pub use analysis::{
    cd_validation, emit_projection, knn_structure_analysis, read_projection, CdReport, CdRow, StructureTable,
    DEFAULT_EPSILON,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("k = {k} folds but only {n} samples")]
    KLargerThanN { k: usize, n: usize },
    #[error("projection export needs 2 components, got {0}")]
    WrongDimensionality(usize),
    #[error("fold {fold} leaks test rows into {stage}")]
    Leakage { fold: usize, stage: &'static str },
    #[error("{setting}, repeat {repeat}, fold {fold}: {source}")]
    InTask {
        setting: String,
        repeat: usize,
        fold: usize,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::KLargerThanN { .. } | HarnessError::WrongDimensionality(_) => 1,
            HarnessError::InTask { source, .. } => source.exit_code(),
            HarnessError::Classify(ClassifyError::ConfigOutOfBounds(_) | ClassifyError::KTooLarge { .. })
            | HarnessError::Tune(TuneError::TooFewInitial(_) | TuneError::OutOfBounds(_)) => 1,
            HarnessError::Manifest(_)
            | HarnessError::Fetch(_)
            | HarnessError::Extract(_)
            | HarnessError::Embed(_)
            | HarnessError::Io(_)
            | HarnessError::Json(_)
            | HarnessError::Csv(_)
            | HarnessError::Tune(TuneError::BadTrace { .. } | TuneError::Io(_) | TuneError::Csv(_))
            | HarnessError::Classify(ClassifyError::Io(_) | ClassifyError::Json(_) | ClassifyError::UnsupportedVersion(_)) => 2,
            _ => 3,
        }
    }
}

/// Per-fold train/test split. Test sets partition `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified `k`-fold split: each class is shuffled by `seed` and dealt
/// round-robin, continuing from the fold where the previous class stopped so
/// fold sizes stay within one of each other. Classes with fewer than `k`
/// members are spread over as many folds as they fill.
pub fn stratified_kfold(y: &[usize], k: usize, seed: u64) -> Result<FoldPlan, HarnessError> {
    let n = y.len();
    if k < 2 {
        return Err(HarnessError::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(HarnessError::KLargerThanN { k, n });
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut members) in by_class {
        if members.len() < k {
            log::warn!("class {class} has {} samples for {k} folds; some folds will not test it", members.len());
        }
        members.shuffle(&mut rng);
        for i in members {
            tests[next].push(i);
            next = (next + 1) % k;
        }
    }
    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let in_test: BTreeSet<usize> = test.iter().copied().collect();
            let train = (0..n).filter(|i| !in_test.contains(i)).collect();
            Fold { train, test }
        })
        .collect();
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmbeddingSpec {
    Tfidf {
        #[serde(default = "default_min_df")]
        min_df: usize,
        #[serde(default = "default_max_features")]
        max_features: usize,
    },
    External {
        path: PathBuf,
    },
}

fn default_min_df() -> usize {
    embed::DEFAULT_MIN_DF
}

fn default_max_features() -> usize {
    embed::DEFAULT_MAX_FEATURES
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Tfidf {
            min_df: default_min_df(),
            max_features: default_max_features(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReducerKind {
    None,
    Pca,
    Lda,
    Isomap,
    Tsne,
}

/// FULL fits the reducer on every row before splitting; FOLD fits it on each
/// training split only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReduceScope {
    #[default]
    Full,
    Fold,
}

impl std::str::FromStr for ReduceScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ReduceScope::Full),
            "fold" => Ok(ReduceScope::Fold),
            other => Err(format!("unknown reduce scope {other:?} (expected full or fold)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReducerSpec {
    pub method: ReducerKind,
    pub r: usize,
    pub scope: ReduceScope,
    pub shrinkage: f64,
    pub k_neighbors: usize,
    pub perplexity: f64,
    pub iters: usize,
}

impl Default for ReducerSpec {
    fn default() -> Self {
        ReducerSpec {
            method: ReducerKind::Lda,
            r: 6,
            scope: ReduceScope::Full,
            shrinkage: reduce::DEFAULT_SHRINKAGE,
            k_neighbors: 10,
            perplexity: 30.0,
            iters: 1000,
        }
    }
}

impl ReducerSpec {
    pub fn none() -> Self {
        ReducerSpec {
            method: ReducerKind::None,
            ..ReducerSpec::default()
        }
    }

    pub fn tag(&self) -> String {
        match self.method {
            ReducerKind::None => "none".into(),
            ReducerKind::Pca => format!("pca(r={})", self.r),
            ReducerKind::Lda => format!("lda(r={})", self.r),
            ReducerKind::Isomap => format!("isomap(k={},r={})", self.k_neighbors, self.r),
            ReducerKind::Tsne => format!("tsne(perplexity={})", self.perplexity),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Objective {
    #[default]
    MacroF1,
    Fdc,
}

impl Objective {
    pub fn score(self, m: &MetricReport) -> f64 {
        match self {
            Objective::MacroF1 => m.macro_f1,
            Objective::Fdc => m.fdc,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f1" | "macro_f1" => Ok(Objective::MacroF1),
            "fdc" => Ok(Objective::Fdc),
            other => Err(format!("unknown objective {other:?} (expected f1 or fdc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub embedding: EmbeddingSpec,
    pub reducer: ReducerSpec,
    /// SMOTE + Tomek on each training split.
    pub sampler: bool,
    pub smote_k: usize,
    /// One entry per hyperparameter setting evaluated.
    pub classifiers: Vec<ClassifierConfig>,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            embedding: EmbeddingSpec::default(),
            reducer: ReducerSpec::default(),
            sampler: true,
            smote_k: sample::DEFAULT_SMOTE_K,
            classifiers: vec![ClassifierConfig::Forest(ForestConfig::default())],
            folds: 10,
            repeats: 1,
            seed: 0,
            objective: Objective::MacroF1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.classifiers.is_empty() {
            return bad("no classifier configured");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        let r = &self.reducer;
        if matches!(r.method, ReducerKind::Isomap | ReducerKind::Tsne) && r.scope == ReduceScope::Fold {
            return bad("isomap and t-SNE have no out-of-sample transform; use FULL scope");
        }
        if r.method != ReducerKind::None && r.method != ReducerKind::Tsne && r.r == 0 {
            return bad("reducer r must be at least 1");
        }
        Ok(())
    }
}

/// Feature matrix with labels; rows are tests, codes index `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub row_ids: Vec<String>,
    pub class_names: Vec<String>,
}

impl ExperimentData {
    /// Labels use the seven category codes.
    pub fn new(x: Array2<f64>, y: Vec<usize>) -> Self {
        let n = x.nrows();
        ExperimentData {
            x,
            y,
            row_ids: (0..n).map(|i| i.to_string()).collect(),
            class_names: CategoryLabel::names(),
        }
    }

    pub fn from_embedding(m: EmbeddingMatrix, corpus: &Corpus) -> Self {
        ExperimentData {
            x: m.values,
            y: corpus.label_codes(),
            row_ids: m.row_ids,
            class_names: CategoryLabel::names(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.y.iter().map(|&c| self.class_names[c].clone()).collect()
    }
}

/// Reduces every row at once (FULL scope, or a standalone `reduce` run).
pub fn reduce_all(spec: &ReducerSpec, x: ArrayView2<f64>, y: &[usize], seed: u64) -> Result<Array2<f64>, ReduceError> {
    Ok(match spec.method {
        ReducerKind::None => x.to_owned(),
        ReducerKind::Pca => reduce::transform(&reduce::fit_pca(x, spec.r)?, x)?.values,
        ReducerKind::Lda => reduce::transform(&reduce::fit_lda(x, y, spec.r, spec.shrinkage)?, x)?.values,
        ReducerKind::Isomap => reduce::fit_isomap(x, spec.k_neighbors, spec.r)?.values,
        ReducerKind::Tsne => reduce::fit_tsne(x, spec.perplexity, spec.iters, seed)?.values,
    })
}

/// Which original rows fed each fitted stage of one fold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldAudit {
    pub reducer_rows: Option<Vec<usize>>,
    pub sampler_rows: Option<Vec<usize>>,
    pub test_rows: Vec<usize>,
}

impl FoldAudit {
    fn check(&self, fold: usize) -> Result<(), HarnessError> {
        let test: BTreeSet<usize> = self.test_rows.iter().copied().collect();
        for (stage, rows) in [("reducer fitting", &self.reducer_rows), ("sampling", &self.sampler_rows)] {
            if rows.as_ref().is_some_and(|r| r.iter().any(|i| test.contains(i))) {
                return Err(HarnessError::Leakage { fold, stage });
            }
        }
        Ok(())
    }
}

/// A split ready for fitting: reduced (per scope) and rebalanced.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub repeat: usize,
    pub fold: usize,
    pub train_x: Array2<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
    pub train_size: usize,
    pub audit: FoldAudit,
}

fn task_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    seed ^ ((repeat as u64) << 32 | fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Splits, reduces and rebalances every (repeat, fold) of `config`.
pub fn prepare_folds(config: &ExperimentConfig, data: &ExperimentData) -> Result<Vec<PreparedFold>, HarnessError> {
    config.validate()?;
    let spec = &config.reducer;
    let full = match spec.scope {
        ReduceScope::Full => Some(reduce_all(spec, data.x.view(), &data.y, config.seed)?),
        ReduceScope::Fold => None,
    };
    let mut tasks = Vec::new();
    for repeat in 0..config.repeats {
        let plan = stratified_kfold(&data.y, config.folds, config.seed.wrapping_add(repeat as u64))?;
        for (f, fold) in plan.folds.into_iter().enumerate() {
            tasks.push((repeat, f, fold));
        }
    }
    tasks
        .into_par_iter()
        .map(|(repeat, f, fold)| {
            prepare_one(config, data, full.as_ref(), repeat, f, fold).map_err(|e| HarnessError::InTask {
                setting: "prepare".into(),
                repeat,
                fold: f,
                source: Box::new(e),
            })
        })
        .collect()
}

fn prepare_one(
    config: &ExperimentConfig,
    data: &ExperimentData,
    full: Option<&Array2<f64>>,
    repeat: usize,
    f: usize,
    fold: Fold,
) -> Result<PreparedFold, HarnessError> {
    let train_y: Vec<usize> = fold.train.iter().map(|&i| data.y[i]).collect();
    let test_y: Vec<usize> = fold.test.iter().map(|&i| data.y[i]).collect();
    let mut audit = FoldAudit {
        test_rows: fold.test.clone(),
        ..FoldAudit::default()
    };
    let (train_x, test_x) = match full {
        Some(z) => (z.select(Axis(0), &fold.train), z.select(Axis(0), &fold.test)),
        None => {
            let tr = data.x.select(Axis(0), &fold.train);
            let te = data.x.select(Axis(0), &fold.test);
            let spec = &config.reducer;
            let projection = match spec.method {
                ReducerKind::None => None,
                ReducerKind::Pca => Some(reduce::fit_pca(tr.view(), spec.r)?),
                ReducerKind::Lda => Some(reduce::fit_lda(tr.view(), &train_y, spec.r, spec.shrinkage)?),
                ReducerKind::Isomap | ReducerKind::Tsne => unreachable!("rejected by validate"),
            };
            match projection {
                Some(p) => {
                    audit.reducer_rows = Some(fold.train.clone());
                    (reduce::transform(&p, tr.view())?.values, reduce::transform(&p, te.view())?.values)
                }
                None => (tr, te),
            }
        }
    };
    let train_size = train_y.len();
    let (train_x, train_y) = if config.sampler {
        audit.sampler_rows = Some(fold.train.clone());
        let s = sample::balance(train_x.view(), &train_y, config.smote_k, task_seed(config.seed, repeat, f))?;
        (s.x, s.y)
    } else {
        (train_x, train_y)
    };
    audit.check(f)?;
    Ok(PreparedFold {
        repeat,
        fold: f,
        train_x,
        train_y,
        test_x,
        test_y,
        train_size,
        audit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub repeat: usize,
    pub fold: usize,
    pub train_size: usize,
    pub balanced_size: usize,
    pub test_size: usize,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub classifier: ClassifierConfig,
    pub folds: Vec<FoldOutcome>,
    pub mean_macro_f1: f64,
    pub mean_fdc: f64,
    pub mean_per_class_f1: IndexMap<String, f64>,
}

impl SettingReport {
    fn from_folds(classifier: ClassifierConfig, folds: Vec<FoldOutcome>, class_names: &[String]) -> Self {
        let n = folds.len() as f64;
        let mean = |f: &dyn Fn(&FoldOutcome) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let mean_per_class_f1 = class_names
            .iter()
            .enumerate()
            .map(|(c, name)| (name.clone(), mean(&|o| o.metrics.per_class_f1[c])))
            .collect();
        SettingReport {
            mean_macro_f1: mean(&|o| o.metrics.macro_f1),
            mean_fdc: mean(&|o| o.metrics.fdc),
            mean_per_class_f1,
            classifier,
            folds,
        }
    }

    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::MacroF1 => self.mean_macro_f1,
            Objective::Fdc => self.mean_fdc,
        }
    }
}

/// Fold-level results for every setting. Wall-clock time is kept out of the
/// serialized form so repeated runs produce identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub settings: Vec<SettingReport>,
    pub best_setting: usize,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl ExperimentReport {
    pub fn best(&self) -> &SettingReport {
        &self.settings[self.best_setting]
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    /// One row per category, one column per setting: mean per-class F1, with
    /// a final macro row.
    pub fn write_per_class_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["category".to_string()];
        header.extend((0..self.settings.len()).map(|i| format!("setting{i}")));
        w.write_record(&header)?;
        if let Some(first) = self.settings.first() {
            for name in first.mean_per_class_f1.keys() {
                let mut row = vec![name.clone()];
                row.extend(self.settings.iter().map(|s| format!("{:.4}", s.mean_per_class_f1[name])));
                w.write_record(&row)?;
            }
        }
        let mut row = vec!["macro".to_string()];
        row.extend(self.settings.iter().map(|s| format!("{:.4}", s.mean_macro_f1)));
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }
}

/// Fits `classifier` on each prepared fold and scores the untouched test split.
pub fn evaluate_setting(
    prepared: &[PreparedFold],
    classifier: &ClassifierConfig,
    class_names: &[String],
) -> Result<Vec<FoldOutcome>, HarnessError> {
    prepared
        .par_iter()
        .map(|p| {
            let run = || -> Result<FoldOutcome, HarnessError> {
                let model = classify::fit(p.train_x.view(), &p.train_y, classifier)?;
                let predicted = model.predict(p.test_x.view())?;
                let metrics = MetricReport::evaluate(&p.test_y, &predicted, class_names)?;
                Ok(FoldOutcome {
                    repeat: p.repeat,
                    fold: p.fold,
                    train_size: p.train_size,
                    balanced_size: p.train_y.len(),
                    test_size: p.test_y.len(),
                    metrics,
                })
            };
            run().map_err(|e| HarnessError::InTask {
                setting: format!("{classifier:?}"),
                repeat: p.repeat,
                fold: p.fold,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Runs every configured setting over every (repeat, fold): balance the
/// training split only, fit, predict the test split, score macro F1 and FDC.
pub fn run_experiment(config: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let prepared = prepare_folds(config, data)?;
    let mut settings = Vec::with_capacity(config.classifiers.len());
    for classifier in &config.classifiers {
        let folds = evaluate_setting(&prepared, classifier, &data.class_names)?;
        settings.push(SettingReport::from_folds(classifier.clone(), folds, &data.class_names));
    }
    let mut best_setting = 0;
    for (i, s) in settings.iter().enumerate() {
        if s.objective(config.objective) > settings[best_setting].objective(config.objective) {
            best_setting = i;
        }
    }
    Ok(ExperimentReport {
        config: config.clone(),
        settings,
        best_setting,
        wall_clock: start.elapsed(),
    })
}

/// Tunes the random forest by Bayesian optimization. Each evaluation is a
/// `config.folds`-fold run; its fold scores under `config.objective` form the
/// observation. Folds are prepared once and shared by every evaluation.
pub fn tune_forest(
    config: &ExperimentConfig,
    data: &ExperimentData,
    space: &ParamSpace,
    opts: OptimizeOptions,
    history: Vec<Observation>,
    on_observation: impl FnMut(usize, &Observation),
) -> Result<(Observation, Vec<Observation>), HarnessError> {
    let prepared = prepare_folds(config, data)?;
    let objective = |p: &tune::ParamPoint| -> Result<Vec<f64>, HarnessError> {
        let cfg = ClassifierConfig::Forest(p.forest_config(config.seed));
        let folds = evaluate_setting(&prepared, &cfg, &data.class_names)?;
        Ok(folds.iter().map(|o| config.objective.score(&o.metrics)).collect())
    };
    Ok(tune::optimize_resumable(objective, space, opts, history, on_observation)?)
}
