use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use flakecat::classify::{ClassifierConfig, Criterion, ForestConfig, Kernel, KnnConfig, SvmConfig};
use flakecat::corpus::{self, SourceFetcher};
use flakecat::embed::{self, read_labeled_csv};
use flakecat::harness::{
    self, cd_validation, emit_projection, knn_structure_analysis, reduce_all, run_experiment, tune_forest,
    EmbeddingSpec, ExperimentConfig, ExperimentData, ExperimentReport, HarnessError, Objective, ReduceScope,
    ReducerKind, ReducerSpec, StructureTable,
};
use flakecat::javalex::{self, FlattenedTest};
use flakecat::reduce::ReducedMatrix;
use flakecat::sample;
use flakecat::tune::{self, OptimizeOptions, ParamSpace};
use flakecat::CategoryLabel;

#[derive(Debug, Parser)]
#[command(name = "flakecat", version, about = "Root-cause categorization of flaky Java tests")]
struct Cli {
    /// Seed for every random choice (folds, sampling, forests, tuning).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Never spawn git; serve sources from the cache only.
    #[arg(long, global = true)]
    offline: bool,
    /// Worker threads. `--threads 1` gives the reference single-threaded run.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_name = "full|fold")]
    reduce_scope: Option<ReduceScope>,
    #[arg(long, global = true, value_name = "f1|fdc")]
    objective: Option<Objective>,
    /// Experiment configuration JSON. Flags given on the command line win.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download and cache the source file of every manifest entry.
    Fetch {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Extract each test method and write its flattened token text.
    Tokenize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
        /// Write the tests that worked and exit 0 even if some failed.
        #[arg(long)]
        keep_going: bool,
    },
    /// Build tf-idf vectors from flattened tests, or import external vectors.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        /// Output of `tokenize`. Not needed with `--external`.
        #[arg(long)]
        flattened: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_df: Option<usize>,
        #[arg(long)]
        max_features: Option<usize>,
        /// CSV of precomputed vectors (`test_id,[label,]v0..`).
        #[arg(long)]
        external: Option<PathBuf>,
    },
    /// Fit a reducer on a feature CSV and write the reduced rows.
    Reduce {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        reducer: ReducerArgs,
    },
    /// Two-component projection as `test_id,label,c0,c1` for plotting.
    PlotData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        reducer: ReducerArgs,
    },
    /// Rebalance a feature CSV with SMOTE + Tomek and dump the result.
    Balance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        smote_k: Option<usize>,
    },
    /// Cross-validate the configured classifiers on a feature CSV.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// Report JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,
    },
    /// KNN macro F1 per reducer and neighbor count.
    SweepKnn {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values = ["pca", "lda", "isomap", "tsne"])]
        reducers: Vec<MethodArg>,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 10, 50, 100, 200])]
        k_values: Vec<usize>,
        /// Table CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// SVM grid over kernels and C.
    SweepSvm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values = ["linear", "poly", "rbf", "sigmoid"])]
        kernels: Vec<KernelArg>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0, 100.0])]
        c_values: Vec<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 3)]
        degree: u32,
        #[arg(long, default_value_t = 0.0)]
        coef0: f64,
        /// Report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `kernel,C,macro_f1,fdc` table.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Bayesian optimization of the random forest.
    TuneRf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_init: usize,
        #[arg(long, default_value_t = 60)]
        n_iter: usize,
        /// Trace CSV, rewritten with any resumed rows and then one row per evaluation.
        #[arg(long)]
        trace: PathBuf,
        /// Continue from an earlier trace.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Folds per evaluation.
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Consistency and discriminancy of FDC against macro F1.
    CdValidate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 50])]
        repeats: Vec<usize>,
        #[arg(long, default_value_t = harness::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 250)]
        knn_k: usize,
        #[arg(long, default_value_t = 0.1)]
        svm_c: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Summarize a report JSON written by `evaluate` or `sweep-svm`.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Per-category F1 table, one column per setting.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CacheArgs {
    /// Source cache directory (default: $FLAKECAT_CACHE, else .flakecat-cache).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReducerArgs {
    #[arg(long)]
    method: Option<MethodArg>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    shrinkage: Option<f64>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Skip SMOTE + Tomek on the training splits.
    #[arg(long)]
    no_sampler: bool,
    #[command(flatten)]
    reducer: ReducerArgs,
}

#[derive(Debug, Args)]
struct ClassifierArgs {
    /// Replace the configured classifiers with a single one.
    #[arg(long)]
    classifier: Option<ClassifierArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    n_estimators: Option<usize>,
    #[arg(long)]
    criterion: Option<Criterion>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    None,
    Pca,
    Lda,
    Isomap,
    Tsne,
}

impl From<MethodArg> for ReducerKind {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::None => ReducerKind::None,
            MethodArg::Pca => ReducerKind::Pca,
            MethodArg::Lda => ReducerKind::Lda,
            MethodArg::Isomap => ReducerKind::Isomap,
            MethodArg::Tsne => ReducerKind::Tsne,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Linear => Kernel::Linear,
            KernelArg::Poly => Kernel::Poly,
            KernelArg::Rbf => Kernel::Rbf,
            KernelArg::Sigmoid => Kernel::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Knn,
    Svm,
    Rf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Harness(e) => e.exit_code() as u8,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Harness(e.into())
    }
}

macro_rules! from_via_harness {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Harness(e.into())
            }
        }
    )*};
}

from_via_harness!(
    csv::Error,
    serde_json::Error,
    embed::EmbedError,
    flakecat::reduce::ReduceError,
    sample::SampleError,
    corpus::ManifestError,
    tune::TuneError
);

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flakecat: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Fetch { manifest, cache } => fetch(&manifest, &cache, cli.offline),
        Command::Tokenize {
            manifest,
            out,
            cache,
            keep_going,
        } => tokenize(&manifest, &out, &cache, cli.offline, keep_going),
        Command::Embed {
            manifest,
            flattened,
            out,
            min_df,
            max_features,
            external,
        } => {
            if let Some(path) = external {
                config.embedding = EmbeddingSpec::External { path };
            } else if let EmbeddingSpec::Tfidf {
                min_df: m,
                max_features: f,
            } = &mut config.embedding
            {
                *m = min_df.unwrap_or(*m);
                *f = max_features.unwrap_or(*f);
            }
            embed_cmd(&manifest, flattened.as_deref(), &out, &config.embedding)
        }
        Command::Reduce { input, out, reducer } => {
            reducer.apply(&mut config.reducer);
            let data = load_features(&input)?;
            let values = reduce_all(&config.reducer, data.x.view(), &data.y, config.seed)?;
            let reduced = ReducedMatrix {
                values,
                row_ids: data.row_ids.clone(),
                reducer_tag: config.reducer.tag(),
            };
            reduced.write_csv(BufWriter::new(File::create(&out)?), &data.labels())?;
            info!("{} rows reduced to {} dimensions with {}", data.len(), reduced.dim(), reduced.reducer_tag);
            Ok(())
        }
        Command::PlotData { input, out, reducer } => {
            reducer.apply(&mut config.reducer);
            config.reducer.r = 2;
            let data = load_features(&input)?;
            let values = reduce_all(&config.reducer, data.x.view(), &data.y, config.seed)?;
            let reduced = ReducedMatrix {
                values,
                row_ids: data.row_ids.clone(),
                reducer_tag: config.reducer.tag(),
            };
            emit_projection(&reduced, &data.labels(), &out)?;
            Ok(())
        }
        Command::Balance { input, out, smote_k } => {
            let data = load_features(&input)?;
            let set = sample::balance(data.x.view(), &data.y, smote_k.unwrap_or(config.smote_k), config.seed)?;
            set.write_debug_csv(BufWriter::new(File::create(&out)?))?;
            info!(
                "{} rows in, {} out ({} synthetic, {} removed by Tomek cleaning)",
                data.len(),
                set.len(),
                set.n_synthetic(),
                set.removed.len()
            );
            Ok(())
        }
        Command::Evaluate {
            input,
            out,
            run,
            classifier,
        } => {
            run.apply(&mut config);
            if let Some(c) = classifier.build()? {
                config.classifiers = vec![c];
            }
            config.validate()?;
            let data = load_features(&input)?;
            let report = run_experiment(&config, &data)?;
            info!("finished in {:.2?}", report.wall_clock);
            write_report(&report, out.as_deref())
        }
        Command::SweepKnn {
            input,
            reducers,
            k_values,
            out,
            run,
        } => {
            run.apply(&mut config);
            let data = load_features(&input)?;
            let table = sweep_knn(&config, &data, &reducers, &k_values)?;
            match out {
                Some(path) => table.write_csv(BufWriter::new(File::create(path)?))?,
                None => table.write_csv(io::stdout().lock())?,
            }
            Ok(())
        }
        Command::SweepSvm {
            input,
            kernels,
            c_values,
            gamma,
            degree,
            coef0,
            out,
            csv,
            run,
        } => {
            run.apply(&mut config);
            config.classifiers = kernels
                .iter()
                .flat_map(|&k| {
                    c_values.iter().map(move |&c| {
                        ClassifierConfig::Svm(SvmConfig {
                            gamma,
                            degree,
                            coef0,
                            ..SvmConfig::new(k.into(), c)
                        })
                    })
                })
                .collect();
            config.validate()?;
            let data = load_features(&input)?;
            let report = run_experiment(&config, &data)?;
            if let Some(path) = csv {
                write_svm_table(&report, BufWriter::new(File::create(path)?))?;
            }
            write_report(&report, out.as_deref())
        }
        Command::TuneRf {
            input,
            n_init,
            n_iter,
            trace,
            resume,
            folds,
        } => {
            config.folds = folds;
            config.validate()?;
            let data = load_features(&input)?;
            let history = match &resume {
                Some(path) => tune::read_trace(BufReader::new(File::open(path)?))?,
                None => Vec::new(),
            };
            if !history.is_empty() {
                info!("resuming from {} observations", history.len());
            }
            let mut w = csv::Writer::from_writer(File::create(&trace)?);
            tune::trace_header(&mut w)?;
            for (i, obs) in history.iter().enumerate() {
                tune::write_trace_row(&mut w, i, obs)?;
            }
            w.flush()?;
            let mut write_err = None;
            let opts = OptimizeOptions {
                n_init,
                n_iter,
                seed: config.seed,
            };
            let (best, _) = tune_forest(&config, &data, &ParamSpace::default(), opts, history, |i, obs| {
                info!("evaluation {i}: objective {:.4}", obs.objective);
                let res = tune::write_trace_row(&mut w, i, obs).and_then(|_| Ok(w.flush()?));
                if let Err(e) = res {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
            println!("{}", serde_json::to_string_pretty(&best)?);
            Ok(())
        }
        Command::CdValidate {
            input,
            repeats,
            epsilon,
            knn_k,
            svm_c,
            out,
            csv,
        } => {
            config.validate()?;
            let data = load_features(&input)?;
            let classifiers = [
                ClassifierConfig::Knn(KnnConfig { k: knn_k }),
                ClassifierConfig::Svm(SvmConfig::new(Kernel::Linear, svm_c)),
                ClassifierConfig::Forest(ForestConfig {
                    seed: config.seed,
                    ..ForestConfig::default()
                }),
            ];
            let report = cd_validation(&config, &data, &classifiers, &repeats, epsilon)?;
            if let Some(path) = csv {
                report.write_csv(BufWriter::new(File::create(path)?))?;
            } else {
                report.write_csv(io::stdout().lock())?;
            }
            if let Some(path) = out {
                fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(())
        }
        Command::Report { input, csv } => {
            let report: ExperimentReport = serde_json::from_str(&fs::read_to_string(&input)?)?;
            print_summary(&report, &mut io::stdout().lock())?;
            if let Some(path) = csv {
                report.write_per_class_csv(BufWriter::new(File::create(path)?))?;
            }
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(scope) = cli.reduce_scope {
        config.reducer.scope = scope;
    }
    if let Some(objective) = cli.objective {
        config.objective = objective;
    }
    Ok(config)
}

impl ReducerArgs {
    fn apply(&self, spec: &mut ReducerSpec) {
        if let Some(m) = self.method {
            spec.method = m.into();
        }
        spec.r = self.r.unwrap_or(spec.r);
        spec.shrinkage = self.shrinkage.unwrap_or(spec.shrinkage);
        spec.k_neighbors = self.k_neighbors.unwrap_or(spec.k_neighbors);
        spec.perplexity = self.perplexity.unwrap_or(spec.perplexity);
        spec.iters = self.iters.unwrap_or(spec.iters);
    }
}

impl RunArgs {
    fn apply(&self, config: &mut ExperimentConfig) {
        config.folds = self.folds.unwrap_or(config.folds);
        config.repeats = self.repeats.unwrap_or(config.repeats);
        if self.no_sampler {
            config.sampler = false;
        }
        self.reducer.apply(&mut config.reducer);
    }
}

impl ClassifierArgs {
    fn build(&self) -> Result<Option<ClassifierConfig>> {
        let Some(kind) = self.classifier else {
            if self.k.is_some() || self.kernel.is_some() || self.c.is_some() || self.n_estimators.is_some() {
                return Err(CliError::Usage("classifier options need --classifier".into()));
            }
            return Ok(None);
        };
        Ok(Some(match kind {
            ClassifierArg::Knn => ClassifierConfig::Knn(KnnConfig {
                k: self.k.unwrap_or(5),
            }),
            ClassifierArg::Svm => {
                let kernel = self.kernel.map_or(Kernel::Rbf, Kernel::from);
                ClassifierConfig::Svm(SvmConfig {
                    gamma: self.gamma,
                    ..SvmConfig::new(kernel, self.c.unwrap_or(1.0))
                })
            }
            ClassifierArg::Rf => {
                let d = ForestConfig::default();
                ClassifierConfig::Forest(ForestConfig {
                    n_estimators: self.n_estimators.unwrap_or(d.n_estimators),
                    criterion: self.criterion.unwrap_or(d.criterion),
                    ..d
                })
            }
        }))
    }
}

/// Reads a labeled feature CSV (`test_id,label,v0..`).
fn load_features(path: &Path) -> Result<ExperimentData> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let rows = read_labeled_csv(BufReader::new(file))?;
    let labels = rows
        .labels
        .ok_or_else(|| CliError::Data(format!("{}: no label column", path.display())))?;
    let y = labels
        .iter()
        .map(|l| l.parse::<CategoryLabel>().map(CategoryLabel::code))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if y.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", path.display())));
    }
    Ok(ExperimentData {
        x: rows.values,
        y,
        row_ids: rows.row_ids,
        class_names: CategoryLabel::names(),
    })
}

fn cache_dir(args: &CacheArgs) -> PathBuf {
    args.cache.clone().unwrap_or_else(corpus::default_cache_dir)
}

fn fetch(manifest: &Path, cache: &CacheArgs, offline: bool) -> Result<()> {
    let corpus = corpus::load_manifest(manifest)?;
    let fetcher = SourceFetcher::new(cache_dir(cache), offline);
    let failures: Vec<String> = corpus
        .records
        .par_iter()
        .filter_map(|r| fetcher.fetch(r).err().map(|e| format!("{}: {e}", r.test_id)))
        .collect();
    for f in &failures {
        warn!("{f}");
    }
    info!("{} of {} sources available", corpus.len() - failures.len(), corpus.len());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} sources could not be fetched", failures.len())))
    }
}

fn tokenize(manifest: &Path, out: &Path, cache: &CacheArgs, offline: bool, keep_going: bool) -> Result<()> {
    let corpus = corpus::load_manifest(manifest)?;
    let fetcher = SourceFetcher::new(cache_dir(cache), offline);
    let results: Vec<std::result::Result<FlattenedTest, String>> = corpus
        .records
        .par_iter()
        .map(|r| {
            let source = fetcher.fetch(r).map_err(|e| format!("{}: {e}", r.test_id))?;
            let stream =
                javalex::extract_test_method(&source, r.method_name()).map_err(|e| format!("{}: {e}", r.test_id))?;
            Ok(FlattenedTest {
                test_id: r.test_id.clone(),
                flattened_source: javalex::flatten(&stream),
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(msg) => {
                warn!("{msg}");
                failed += 1;
            }
        }
    }
    javalex::write_flattened_csv(&rows, BufWriter::new(File::create(out)?))?;
    info!("{} tests flattened, {failed} failed", rows.len());
    if failed > 0 && !keep_going {
        return Err(CliError::Data(format!("{failed} tests could not be tokenized")));
    }
    Ok(())
}

fn embed_cmd(manifest: &Path, flattened: Option<&Path>, out: &Path, spec: &EmbeddingSpec) -> Result<()> {
    let corpus = corpus::load_manifest(manifest)?;
    let labels: Vec<String> = corpus.records.iter().map(|r| r.label.to_string()).collect();
    let matrix = match spec {
        EmbeddingSpec::External { path } => embed::load_external_embeddings(path, &corpus)?,
        EmbeddingSpec::Tfidf { min_df, max_features } => {
            let path = flattened.ok_or_else(|| CliError::Usage("tf-idf needs --flattened".into()))?;
            let rows = javalex::read_flattened_csv(BufReader::new(File::open(path)?))?;
            let by_id: std::collections::HashMap<&str, &str> = rows
                .iter()
                .map(|r| (r.test_id.as_str(), r.flattened_source.as_str()))
                .collect();
            let docs = corpus
                .records
                .iter()
                .map(|r| {
                    by_id
                        .get(r.test_id.as_str())
                        .map(|s| embed::split_terms(s))
                        .ok_or_else(|| CliError::Data(format!("{}: no flattened source", r.test_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let vocab = embed::fit_tfidf(&docs, *min_df, *max_features)?;
            info!("vocabulary of {} terms", vocab.len());
            embed::transform_tfidf(&vocab, &docs).with_row_ids(corpus.test_ids())
        }
    };
    embed::write_embedding_csv(BufWriter::new(File::create(out)?), &matrix, &labels)?;
    Ok(())
}

fn sweep_knn(
    config: &ExperimentConfig,
    data: &ExperimentData,
    reducers: &[MethodArg],
    k_values: &[usize],
) -> Result<StructureTable> {
    let specs: Vec<ReducerSpec> = reducers
        .iter()
        .map(|&m| ReducerSpec {
            method: m.into(),
            r: if matches!(m, MethodArg::Tsne) { 2 } else { config.reducer.r },
            ..config.reducer.clone()
        })
        .collect();
    if config.reducer.scope == ReduceScope::Full {
        let mut reduced = Vec::with_capacity(specs.len());
        for spec in &specs {
            let x = reduce_all(spec, data.x.view(), &data.y, config.seed)?;
            reduced.push((spec.tag(), ExperimentData { x, ..data.clone() }));
        }
        return Ok(knn_structure_analysis(&reduced, k_values, config.folds, config.seed)?);
    }
    let mut table = StructureTable {
        reducers: Vec::new(),
        k_values: k_values.to_vec(),
        f1: Vec::new(),
    };
    for spec in specs {
        let cfg = ExperimentConfig {
            classifiers: k_values.iter().map(|&k| ClassifierConfig::Knn(KnnConfig { k })).collect(),
            reducer: spec,
            ..config.clone()
        };
        cfg.validate()?;
        let report = run_experiment(&cfg, data)?;
        table.reducers.push(cfg.reducer.tag());
        table.f1.push(report.settings.iter().map(|s| s.mean_macro_f1).collect());
    }
    Ok(table)
}

fn write_report(report: &ExperimentReport, out: Option<&Path>) -> Result<()> {
    let json = report.to_json()?;
    match out {
        Some(path) => {
            fs::write(path, json + "\n")?;
            print_summary(report, &mut io::stderr().lock())?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn write_svm_table<W: Write>(report: &ExperimentReport, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kernel", "C", "macro_f1", "fdc"])?;
    for s in &report.settings {
        if let ClassifierConfig::Svm(cfg) = &s.classifier {
            w.write_record([
                format!("{:?}", cfg.kernel).to_lowercase(),
                cfg.c.to_string(),
                format!("{:.4}", s.mean_macro_f1),
                format!("{:.4}", s.mean_fdc),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_summary(report: &ExperimentReport, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{:<4} {:<40} {:>9} {:>7}", "#", "setting", "macro F1", "FDC")?;
    for (i, s) in report.settings.iter().enumerate() {
        let mark = if i == report.best_setting { "*" } else { " " };
        let desc = serde_json::to_string(&s.classifier).unwrap_or_default();
        let desc: String = desc.chars().take(40).collect();
        writeln!(out, "{i:<3}{mark} {desc:<40} {:>9.4} {:>7.4}", s.mean_macro_f1, s.mean_fdc)?;
    }
    if let Some(best) = report.settings.get(report.best_setting) {
        writeln!(out, "per-class F1 of setting {}:", report.best_setting)?;
        for (name, f1) in &best.mean_per_class_f1 {
            writeln!(out, "  {name:<8} {f1:.4}")?;
        }
    }
    Ok(())
}
