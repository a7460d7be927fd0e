//! Bayesian optimization of random-forest hyperparameters over the tuning
//! box, using a Gaussian-process surrogate and expected improvement.

mod gp;

use std::fmt::Display;
use std::io::{Read, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Criterion, ForestConfig};

pub use gp::{expected_improvement, gp_posterior, log_marginal_likelihood, nelder_mead, GpHyper, GpState};

/// Random candidates scored per acquisition round.
pub const ACQUISITION_CANDIDATES: usize = 2048;
/// Random restarts when fitting GP hyperparameters.
pub const GP_RESTARTS: usize = 5;
/// Encoded dimension: seven numeric parameters plus a three-way one-hot.
pub const ENCODED_DIM: usize = 10;

// Above this many observations the GP hyperparameters are refit only every
// REFIT_EVERY rounds; in between the previous fit is reused.
const FULL_REFIT_LIMIT: usize = 100;
const REFIT_EVERY: usize = 10;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("{0}")]
    OutOfBounds(String),
    #[error("need at least 2 initial points, got {0}")]
    TooFewInitial(usize),
    #[error("GP has no observations")]
    NoObservations,
    #[error("GP Gram matrix is singular even with raised noise")]
    SingularGram,
    #[error("objective failed at {point:?}: {message}")]
    Objective { point: Box<ParamPoint>, message: String },
    #[error("objective returned no fold scores at {0:?}")]
    EmptyScores(Box<ParamPoint>),
    #[error("trace line {line}: {message}")]
    BadTrace { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bound {
    Int { lo: usize, hi: usize },
    Real { lo: f64, hi: f64 },
}

impl Bound {
    fn lo_hi(self) -> (f64, f64) {
        match self {
            Bound::Int { lo, hi } => (lo as f64, hi as f64),
            Bound::Real { lo, hi } => (lo, hi),
        }
    }
}

/// The eight tuned parameters: seven numeric bounds in a fixed order plus the
/// split criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub max_depth: Bound,
    pub min_impurity_decrease: Bound,
    pub min_samples_leaf: Bound,
    pub min_samples_split: Bound,
    pub n_estimators: Bound,
    pub min_weight_fraction_leaf: Bound,
    pub max_leaf_nodes: Bound,
    pub criteria: Vec<Criterion>,
}

impl Default for ParamSpace {
    fn default() -> Self {
        ParamSpace {
            max_depth: Bound::Int { lo: 1, hi: 200 },
            min_impurity_decrease: Bound::Real { lo: 0.0, hi: 0.5 },
            min_samples_leaf: Bound::Int { lo: 1, hi: 200 },
            min_samples_split: Bound::Int { lo: 2, hi: 400 },
            n_estimators: Bound::Int { lo: 100, hi: 200 },
            min_weight_fraction_leaf: Bound::Real { lo: 0.0, hi: 0.05 },
            max_leaf_nodes: Bound::Int { lo: 2, hi: 400 },
            criteria: Criterion::ALL.to_vec(),
        }
    }
}

impl ParamSpace {
    pub const NAMES: [&'static str; 7] = [
        "max_depth",
        "min_impurity_decrease",
        "min_samples_leaf",
        "min_samples_split",
        "n_estimators",
        "min_weight_fraction_leaf",
        "max_leaf_nodes",
    ];

    pub fn numeric(&self) -> [Bound; 7] {
        [
            self.max_depth,
            self.min_impurity_decrease,
            self.min_samples_leaf,
            self.min_samples_split,
            self.n_estimators,
            self.min_weight_fraction_leaf,
            self.max_leaf_nodes,
        ]
    }

    pub fn contains(&self, p: &ParamPoint) -> bool {
        self.numeric().iter().zip(p.numeric()).all(|(b, v)| {
            let (lo, hi) = b.lo_hi();
            v >= lo && v <= hi
        }) && self.criteria.contains(&p.criterion)
    }

    /// Uniform draw: integers uniform over their range, reals uniform,
    /// criterion uniform.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> ParamPoint {
        let v: Vec<f64> = self
            .numeric()
            .iter()
            .map(|b| match *b {
                Bound::Int { lo, hi } => rng.random_range(lo..=hi) as f64,
                Bound::Real { lo, hi } => rng.random_range(lo..=hi),
            })
            .collect();
        let criterion = *self.criteria.choose(rng).expect("non-empty criteria");
        ParamPoint::from_numeric(&v, criterion)
    }
}

/// One random-forest configuration in the tuning space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub max_depth: usize,
    pub min_impurity_decrease: f64,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub n_estimators: usize,
    pub min_weight_fraction_leaf: f64,
    pub max_leaf_nodes: usize,
    pub criterion: Criterion,
}

impl ParamPoint {
    fn numeric(&self) -> [f64; 7] {
        [
            self.max_depth as f64,
            self.min_impurity_decrease,
            self.min_samples_leaf as f64,
            self.min_samples_split as f64,
            self.n_estimators as f64,
            self.min_weight_fraction_leaf,
            self.max_leaf_nodes as f64,
        ]
    }

    fn from_numeric(v: &[f64], criterion: Criterion) -> Self {
        ParamPoint {
            max_depth: v[0] as usize,
            min_impurity_decrease: v[1],
            min_samples_leaf: v[2] as usize,
            min_samples_split: v[3] as usize,
            n_estimators: v[4] as usize,
            min_weight_fraction_leaf: v[5],
            max_leaf_nodes: v[6] as usize,
            criterion,
        }
    }

    pub fn forest_config(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            max_depth: self.max_depth,
            min_impurity_decrease: self.min_impurity_decrease,
            min_samples_leaf: self.min_samples_leaf,
            min_samples_split: self.min_samples_split,
            n_estimators: self.n_estimators,
            min_weight_fraction_leaf: self.min_weight_fraction_leaf,
            max_leaf_nodes: self.max_leaf_nodes,
            criterion: self.criterion,
            seed,
        }
    }
}

/// Maps a point to the unit cube: numeric parameters min-max scaled, the
/// criterion one-hot in the space's criterion order.
pub fn encode(point: &ParamPoint, space: &ParamSpace) -> Result<Vec<f64>, TuneError> {
    if !space.contains(point) {
        return Err(TuneError::OutOfBounds(format!("{point:?}")));
    }
    let mut out: Vec<f64> = space
        .numeric()
        .iter()
        .zip(point.numeric())
        .map(|(b, v)| {
            let (lo, hi) = b.lo_hi();
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect();
    out.extend(space.criteria.iter().map(|&c| if c == point.criterion { 1.0 } else { 0.0 }));
    Ok(out)
}

/// Inverse of [`encode`]; coordinates are clamped to `[0, 1]`, integers round
/// half up and the criterion is the largest one-hot entry (first on ties).
pub fn decode(u: &[f64], space: &ParamSpace) -> ParamPoint {
    let v: Vec<f64> = space
        .numeric()
        .iter()
        .zip(u)
        .map(|(b, &x)| {
            let x = x.clamp(0.0, 1.0);
            match *b {
                Bound::Int { lo, hi } => {
                    let raw = lo as f64 + x * (hi - lo) as f64;
                    ((raw + 0.5).floor() as usize).clamp(lo, hi) as f64
                }
                Bound::Real { lo, hi } => (lo + x * (hi - lo)).clamp(lo, hi),
            }
        })
        .collect();
    let hot = &u[7..7 + space.criteria.len()];
    let mut best = 0;
    for (i, &h) in hot.iter().enumerate() {
        if h > hot[best] {
            best = i;
        }
    }
    ParamPoint::from_numeric(&v, space.criteria[best])
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: ParamPoint,
    pub objective: f64,
    pub fold_scores: Vec<f64>,
}

impl Observation {
    pub fn new(point: ParamPoint, fold_scores: Vec<f64>) -> Self {
        let objective = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        Observation {
            point,
            objective,
            fold_scores,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub n_init: usize,
    pub n_iter: usize,
    pub seed: u64,
}

fn default_hyper() -> GpHyper {
    GpHyper::isotropic(ENCODED_DIM, 0.5, 1.0, 1e-6)
}

fn evaluate<F, E>(objective: &mut F, point: ParamPoint) -> Result<Observation, TuneError>
where
    F: FnMut(&ParamPoint) -> Result<Vec<f64>, E>,
    E: Display,
{
    match objective(&point) {
        Ok(scores) if scores.is_empty() => Err(TuneError::EmptyScores(Box::new(point))),
        Ok(scores) => Ok(Observation::new(point, scores)),
        Err(e) => Err(TuneError::Objective {
            point: Box::new(point),
            message: e.to_string(),
        }),
    }
}

fn random_encoded<R: Rng>(rng: &mut R, space: &ParamSpace) -> Vec<f64> {
    let mut u: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
    let hot = rng.random_range(0..space.criteria.len());
    u.extend((0..space.criteria.len()).map(|i| if i == hot { 1.0 } else { 0.0 }));
    u
}

// Integer coordinates snap to the grid the decoder would produce.
fn snap(u: &[f64], space: &ParamSpace) -> Vec<f64> {
    encode(&decode(u, space), space).expect("decoded points are in bounds")
}

/// Picks the next point: EI over random candidates, the best few refined by a
/// shrinking coordinate search over the numeric dimensions.
fn propose<R: Rng>(gp: &GpState, best: f64, space: &ParamSpace, seen: &[Observation], rng: &mut R) -> ParamPoint {
    let ei = |u: &[f64]| {
        let (m, v) = gp.posterior(&snap(u, space));
        expected_improvement(m, v, best)
    };
    let mut scored: Vec<(f64, Vec<f64>)> = (0..ACQUISITION_CANDIDATES)
        .map(|_| {
            let u = random_encoded(rng, space);
            (ei(&u), u)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(5);
    for (score, u) in scored.iter_mut() {
        let mut step = 0.1;
        while step >= 1e-3 {
            let mut moved = false;
            for d in 0..7 {
                for dir in [-1.0, 1.0] {
                    let mut cand = u.clone();
                    cand[d] = (cand[d] + dir * step).clamp(0.0, 1.0);
                    let s = ei(&cand);
                    if s > *score {
                        *score = s;
                        *u = cand;
                        moved = true;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let fresh = scored.iter().map(|(_, u)| decode(u, space)).find(|p| seen.iter().all(|o| &o.point != p));
    fresh.unwrap_or_else(|| space.sample(rng))
}

/// Maximizes `objective` (which returns per-fold scores) over `space`:
/// `n_init` uniform random points, then `n_iter` GP/EI rounds.
pub fn optimize<F, E>(
    objective: F,
    space: &ParamSpace,
    n_init: usize,
    n_iter: usize,
    seed: u64,
) -> Result<(Observation, Vec<Observation>), TuneError>
where
    F: FnMut(&ParamPoint) -> Result<Vec<f64>, E>,
    E: Display,
{
    optimize_resumable(objective, space, OptimizeOptions { n_init, n_iter, seed }, Vec::new(), |_, _| {})
}

/// [`optimize`] continuing from an earlier trace. Observations already in
/// `history` count toward the `n_init + n_iter` budget; the random stream is
/// reseeded from `seed + history.len()` so a resumed run is itself
/// deterministic. `on_observation` sees each new observation as it lands.
pub fn optimize_resumable<F, E>(
    mut objective: F,
    space: &ParamSpace,
    opts: OptimizeOptions,
    history: Vec<Observation>,
    mut on_observation: impl FnMut(usize, &Observation),
) -> Result<(Observation, Vec<Observation>), TuneError>
where
    F: FnMut(&ParamPoint) -> Result<Vec<f64>, E>,
    E: Display,
{
    if opts.n_init < 2 {
        return Err(TuneError::TooFewInitial(opts.n_init));
    }
    for o in &history {
        if !space.contains(&o.point) {
            return Err(TuneError::OutOfBounds(format!("{:?}", o.point)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(history.len() as u64));
    let mut trace = history;
    let total = opts.n_init + opts.n_iter;
    while trace.len() < opts.n_init {
        let obs = evaluate(&mut objective, space.sample(&mut rng))?;
        on_observation(trace.len(), &obs);
        trace.push(obs);
    }
    let mut hyper = default_hyper();
    while trace.len() < total {
        let x: Vec<Vec<f64>> = trace.iter().map(|o| encode(&o.point, space)).collect::<Result<_, _>>()?;
        let y: Vec<f64> = trace.iter().map(|o| o.objective).collect();
        let round = trace.len() - opts.n_init;
        let gp = if trace.len() <= FULL_REFIT_LIMIT || round.is_multiple_of(REFIT_EVERY) {
            let gp = GpState::fit_optimized(x, &y, &default_hyper(), GP_RESTARTS, rng.random())?;
            hyper = gp.hyper.clone();
            gp
        } else {
            GpState::fit(x, &y, hyper.clone())?
        };
        let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let point = propose(&gp, best, space, &trace, &mut rng);
        let obs = evaluate(&mut objective, point)?;
        on_observation(trace.len(), &obs);
        trace.push(obs);
    }
    let best = best_observation(&trace).expect("n_init >= 2").clone();
    Ok((best, trace))
}

/// Highest objective; the earliest on ties.
pub fn best_observation(trace: &[Observation]) -> Option<&Observation> {
    trace.iter().fold(None, |acc: Option<&Observation>, o| match acc {
        Some(b) if b.objective >= o.objective => Some(b),
        _ => Some(o),
    })
}

const TRACE_HEADER: [&str; 11] = [
    "iteration",
    "max_depth",
    "min_impurity_decrease",
    "min_samples_leaf",
    "min_samples_split",
    "n_estimators",
    "min_weight_fraction_leaf",
    "max_leaf_nodes",
    "criterion",
    "fold_scores",
    "objective",
];

pub fn trace_header<W: Write>(writer: &mut csv::Writer<W>) -> csv::Result<()> {
    writer.write_record(TRACE_HEADER)
}

/// One trace row; fold scores are `;`-separated.
pub fn write_trace_row<W: Write>(writer: &mut csv::Writer<W>, iteration: usize, obs: &Observation) -> csv::Result<()> {
    let p = &obs.point;
    let folds: Vec<String> = obs.fold_scores.iter().map(|s| s.to_string()).collect();
    writer.write_record([
        iteration.to_string(),
        p.max_depth.to_string(),
        p.min_impurity_decrease.to_string(),
        p.min_samples_leaf.to_string(),
        p.min_samples_split.to_string(),
        p.n_estimators.to_string(),
        p.min_weight_fraction_leaf.to_string(),
        p.max_leaf_nodes.to_string(),
        p.criterion.as_str().to_string(),
        folds.join(";"),
        obs.objective.to_string(),
    ])
}

pub fn write_trace<W: Write>(trace: &[Observation], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    trace_header(&mut w)?;
    for (i, o) in trace.iter().enumerate() {
        write_trace_row(&mut w, i, o)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<Observation>, TuneError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |message: String| TuneError::BadTrace { line, message };
        if rec.len() != TRACE_HEADER.len() {
            return Err(bad(format!("expected {} fields, got {}", TRACE_HEADER.len(), rec.len())));
        }
        let num = |k: usize| rec[k].trim().parse::<f64>().map_err(|e| bad(format!("{}: {e}", TRACE_HEADER[k])));
        let int = |k: usize| rec[k].trim().parse::<usize>().map_err(|e| bad(format!("{}: {e}", TRACE_HEADER[k])));
        let point = ParamPoint {
            max_depth: int(1)?,
            min_impurity_decrease: num(2)?,
            min_samples_leaf: int(3)?,
            min_samples_split: int(4)?,
            n_estimators: int(5)?,
            min_weight_fraction_leaf: num(6)?,
            max_leaf_nodes: int(7)?,
            criterion: rec[8].parse().map_err(bad)?,
        };
        let fold_scores = rec[9]
            .split(';')
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("fold_scores: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Observation {
            point,
            fold_scores,
            objective: num(10)?,
        });
    }
    Ok(out)
}
