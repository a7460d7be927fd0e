//! Gaussian-process regression with an ARD Matérn-5/2 kernel.
//!
//! Targets are standardized before fitting, so the prior mean is the sample
//! mean of the observations and the signal variance is in standardized units.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::TuneError;
use crate::linalg::{cholesky, solve_lower, solve_upper_transposed};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_NOISE: f64 = 1e-1;

/// Kernel hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyper {
    pub fn isotropic(dim: usize, length_scale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        GpHyper {
            length_scales: vec![length_scale; dim],
            signal_variance,
            noise_variance,
        }
    }

    /// `k(a, b) = s² (1 + √5 r + 5r²/3) exp(−√5 r)` with `r` the
    /// length-scaled Euclidean distance.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        let sr = (5.0 * r2).sqrt();
        self.signal_variance * (1.0 + sr + 5.0 * r2 / 3.0) * (-sr).exp()
    }
}

/// Fitted GP: observations, hyperparameters and the Cholesky factor of
/// `K + σ²I`.
#[derive(Debug, Clone)]
pub struct GpState {
    pub hyper: GpHyper,
    pub x: Vec<Vec<f64>>,
    pub y_mean: f64,
    pub y_scale: f64,
    pub chol: Array2<f64>,
    alpha: Array1<f64>,
    /// The noise floor had to be raised for the factorization to succeed.
    pub noise_raised: bool,
}

impl GpState {
    /// Fits with fixed hyperparameters.
    pub fn fit(x: Vec<Vec<f64>>, y: &[f64], hyper: GpHyper) -> Result<Self, TuneError> {
        assert_eq!(x.len(), y.len(), "one target per point");
        if y.is_empty() {
            return Err(TuneError::NoObservations);
        }
        let (y_mean, y_scale) = standardization(y);
        let z: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let mut hyper = hyper;
        let mut noise_raised = false;
        let chol = loop {
            if let Some(l) = cholesky(gram(&hyper, &x).view()) {
                break l;
            }
            if hyper.noise_variance >= MAX_NOISE {
                return Err(TuneError::SingularGram);
            }
            hyper.noise_variance = (hyper.noise_variance * 10.0).max(1e-10);
            noise_raised = true;
        };
        if noise_raised {
            log::warn!("GP Gram matrix singular; noise raised to {:e}", hyper.noise_variance);
        }
        let alpha = solve_upper_transposed(chol.view(), solve_lower(chol.view(), Array1::from(z).view()).view());
        Ok(GpState {
            hyper,
            x,
            y_mean,
            y_scale,
            chol,
            alpha,
            noise_raised,
        })
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood with
    /// Nelder–Mead from `restarts` starting points (the first is `initial`).
    pub fn fit_optimized(
        x: Vec<Vec<f64>>,
        y: &[f64],
        initial: &GpHyper,
        restarts: usize,
        seed: u64,
    ) -> Result<Self, TuneError> {
        let hyper = optimize_hyper(&x, y, initial, restarts, seed);
        Self::fit(x, y, hyper)
    }

    /// Posterior mean and variance at `query`, in the units of the targets.
    pub fn posterior(&self, query: &[f64]) -> (f64, f64) {
        let k_star = Array1::from_iter(self.x.iter().map(|xi| self.hyper.kernel(xi, query)));
        let mean = self.y_mean + self.y_scale * k_star.dot(&self.alpha);
        let v = solve_lower(self.chol.view(), k_star.view());
        let var = (self.hyper.signal_variance - v.dot(&v)).max(0.0);
        (mean, var * self.y_scale * self.y_scale)
    }

    /// Prior variance in target units; the limit of the posterior variance far
    /// from every observation.
    pub fn prior_variance(&self) -> f64 {
        self.hyper.signal_variance * self.y_scale * self.y_scale
    }
}

/// `(mean, variance)` of the GP posterior at `x`.
pub fn gp_posterior(state: &GpState, x: &[f64]) -> (f64, f64) {
    state.posterior(x)
}

fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

fn gram(hyper: &GpHyper, x: &[Vec<f64>]) -> Array2<f64> {
    let n = x.len();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v = hyper.kernel(&x[i], &x[j]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
        k[[i, i]] += hyper.noise_variance;
    }
    k
}

/// Log marginal likelihood of standardized targets `z`, or `None` if the
/// Gram matrix does not factor.
pub fn log_marginal_likelihood(hyper: &GpHyper, x: &[Vec<f64>], z: &[f64]) -> Option<f64> {
    let l = cholesky(gram(hyper, x).view())?;
    let zv = Array1::from(z.to_vec());
    let w = solve_lower(l.view(), zv.view());
    let log_det: f64 = l.diag().iter().map(|d| d.ln()).sum();
    Some(-0.5 * w.dot(&w) - log_det - 0.5 * z.len() as f64 * LOG_2PI)
}

// Search box in log space: length scales, signal variance, noise variance.
const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_SIGNAL: (f64, f64) = (-4.6, 4.6);
const LOG_NOISE: (f64, f64) = (-23.0, -2.3);

fn pack(h: &GpHyper) -> Vec<f64> {
    let mut v: Vec<f64> = h.length_scales.iter().map(|l| l.ln()).collect();
    v.push(h.signal_variance.ln());
    v.push(h.noise_variance.max(1e-10).ln());
    v
}

fn unpack(v: &[f64]) -> GpHyper {
    let d = v.len() - 2;
    GpHyper {
        length_scales: v[..d].iter().map(|x| x.clamp(LOG_LENGTH.0, LOG_LENGTH.1).exp()).collect(),
        signal_variance: v[d].clamp(LOG_SIGNAL.0, LOG_SIGNAL.1).exp(),
        noise_variance: v[d + 1].clamp(LOG_NOISE.0, LOG_NOISE.1).exp(),
    }
}

fn optimize_hyper(x: &[Vec<f64>], y: &[f64], initial: &GpHyper, restarts: usize, seed: u64) -> GpHyper {
    let (m, s) = standardization(y);
    let z: Vec<f64> = y.iter().map(|v| (v - m) / s).collect();
    let objective = |v: &[f64]| log_marginal_likelihood(&unpack(v), x, &z).map_or(f64::INFINITY, |l| -l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = initial.length_scales.len();
    let mut best = pack(initial);
    let mut best_val = objective(&best);
    for r in 0..restarts.max(1) {
        let start = if r == 0 {
            pack(initial)
        } else {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(LOG_LENGTH.0..LOG_LENGTH.1)).collect();
            v.push(rng.random_range(LOG_SIGNAL.0..LOG_SIGNAL.1));
            v.push(rng.random_range(LOG_NOISE.0..LOG_NOISE.1));
            v
        };
        let (v, val) = nelder_mead(&objective, start, 0.5, 60 * (dim + 2), 1e-8);
        if val < best_val {
            best = v;
            best_val = val;
        }
    }
    unpack(&best)
}

/// Minimizes `f` from `start` with an axis-aligned initial simplex of size
/// `step`. Returns the best vertex and its value.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: Vec<f64>, step: f64, max_evals: usize, f_tol: f64) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() <= f_tol * (1.0 + values[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = f(&c);
                (c, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("non-empty simplex");
    (simplex[best].clone(), values[best])
}

/// Expected improvement over `best` for maximization; `max(μ − f*, 0)` when
/// the variance is zero.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gap = mean - best;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    let normal = Normal::standard();
    (gap * normal.cdf(z) + sigma * normal.pdf(z)).max(0.0)
}
