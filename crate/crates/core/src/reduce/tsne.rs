//! Exact t-SNE: O(n²) affinities and gradients, no tree or grid approximations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{default_row_ids, ReduceError, ReducedMatrix};
use crate::linalg::pairwise_squared_distances;

const ENTROPY_TOL_BITS: f64 = 1e-5;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const INITIAL_MOMENTUM: f64 = 0.5;
const FINAL_MOMENTUM: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl TsneOptions {
    pub fn new(perplexity: f64, iters: usize, seed: u64) -> Self {
        TsneOptions {
            perplexity,
            iters,
            seed,
            learning_rate: 200.0,
        }
    }
}

/// Embedding plus per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct TsneRun {
    pub embedding: ReducedMatrix,
    /// Row-conditional affinities `p_{j|i}` after the σ search.
    pub conditional: Array2<f64>,
    /// KL(P‖Q) per iteration against the un-exaggerated P.
    pub kl_history: Vec<f64>,
}

/// Shannon entropy in bits of one probability row.
pub fn row_entropy_bits(row: ArrayView1<f64>) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
}

// Conditional distribution for precision `beta` and its entropy in bits.
fn row_distribution(d2: ArrayView1<f64>, i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, &v) in d2.iter().enumerate() {
        out[j] = if j == i { 0.0 } else { (-(v - min) * beta).exp() };
        sum += out[j];
    }
    let mut h = 0.0;
    for p in out.iter_mut() {
        *p /= sum;
        if *p > 0.0 {
            h -= *p * p.log2();
        }
    }
    h
}

/// Row-conditional Gaussian affinities with each row's precision found by
/// bisection so its entropy is `log2(perplexity)` within 1e-5 bits.
pub fn conditional_probabilities(d2: ArrayView2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d2.nrows();
    let target = perplexity.log2();
    let mut p = Array2::zeros((n, n));
    let mut row = vec![0.0; n];
    for i in 0..n {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        for _ in 0..200 {
            let h = row_distribution(d2.row(i), i, beta, &mut row);
            if (h - target).abs() < ENTROPY_TOL_BITS {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        row_distribution(d2.row(i), i, beta, &mut row);
        p.row_mut(i).assign(&ArrayView1::from(&row[..]));
    }
    p
}

fn kl_divergence(p: &Array2<f64>, q_num: &Array2<f64>, q_sum: f64) -> f64 {
    let mut kl = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if i != j && pij > 0.0 {
            let qij = (q_num[[i, j]] / q_sum).max(P_FLOOR);
            kl += pij * (pij / qij).ln();
        }
    }
    kl
}

/// Exact t-SNE to two dimensions.
pub fn fit_tsne(x: ArrayView2<f64>, perplexity: f64, iters: usize, seed: u64) -> Result<ReducedMatrix, ReduceError> {
    fit_tsne_detailed(x, &TsneOptions::new(perplexity, iters, seed)).map(|run| run.embedding)
}

/// Exact t-SNE with diagnostics. Momentum is 0.5 and P is exaggerated ×12 for
/// the first 250 iterations, then momentum 0.8 without exaggeration; step
/// sizes use per-coordinate adaptive gains.
pub fn fit_tsne_detailed(x: ArrayView2<f64>, opts: &TsneOptions) -> Result<TsneRun, ReduceError> {
    let n = x.nrows();
    if !(opts.perplexity > 1.0 && opts.perplexity < n as f64 / 3.0) {
        return Err(ReduceError::PerplexityOutOfRange {
            perplexity: opts.perplexity,
            n,
        });
    }
    if opts.iters < EXAGGERATION_ITERS {
        return Err(ReduceError::TooFewIterations(opts.iters));
    }
    let d2 = pairwise_squared_distances(x);
    let conditional = conditional_probabilities(d2.view(), opts.perplexity);
    let mut p = &conditional + &conditional.t();
    p /= 2.0 * n as f64;
    p.mapv_inplace(|v| v.max(P_FLOOR));
    for i in 0..n {
        p[[i, i]] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut q_num = Array2::<f64>::zeros((n, n));
    let mut grad = Array2::<f64>::zeros((n, 2));
    let mut kl_history = Vec::with_capacity(opts.iters);

    for it in 0..opts.iters {
        let (exaggeration, momentum) = if it < EXAGGERATION_ITERS {
            (EXAGGERATION, INITIAL_MOMENTUM)
        } else {
            (1.0, FINAL_MOMENTUM)
        };
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let num = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q_num[[i, j]] = num;
                q_num[[j, i]] = num;
                q_sum += 2.0 * num;
            }
        }
        kl_history.push(kl_divergence(&p, &q_num, q_sum));

        grad.fill(0.0);
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let num = q_num[[i, j]];
                let coeff = (exaggeration * p[[i, j]] - num / q_sum) * num;
                g0 += coeff * (y[[i, 0]] - y[[j, 0]]);
                g1 += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * g0;
            grad[[i, 1]] = 4.0 * g1;
        }

        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
            *gain = gain.max(MIN_GAIN);
            *u = momentum * *u - opts.learning_rate * *gain * *g;
        }
        y += &update;
        let mean: Array1<f64> = y.mean_axis(Axis(0)).expect("n > 0");
        y -= &mean.view().insert_axis(Axis(0));
    }

    Ok(TsneRun {
        embedding: ReducedMatrix {
            values: y,
            row_ids: default_row_ids(n),
            reducer_tag: format!("tsne(perplexity={},iters={},seed={})", opts.perplexity, opts.iters, opts.seed),
        },
        conditional,
        kl_history,
    })
}
