use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_low, check_query, check_training, ClassifyError};
use crate::linalg::squared_distance;

/// KKT violation tolerance for SMO termination.
pub const KKT_TOLERANCE: f64 = 1e-3;

const TAU: f64 = 1e-12;
const SUPPORT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kernel {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub c: f64,
    #[serde(default = "default_degree")]
    pub degree: u32,
    /// `None` means AUTO: `1 / (d · var(X))` over all entries of `X`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub coef0: f64,
}

fn default_degree() -> u32 {
    3
}

impl SvmConfig {
    pub fn new(kernel: Kernel, c: f64) -> Self {
        SvmConfig {
            kernel,
            c,
            degree: default_degree(),
            gamma: None,
            coef0: 0.0,
        }
    }
}

/// Kernel with gamma resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub kernel: Kernel,
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

impl KernelParams {
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self.kernel {
            Kernel::Linear => a.dot(&b),
            Kernel::Poly => (self.gamma * a.dot(&b) + self.coef0).powi(self.degree as i32),
            Kernel::Rbf => (-self.gamma * squared_distance(a, b)).exp(),
            Kernel::Sigmoid => (self.gamma * a.dot(&b) + self.coef0).tanh(),
        }
    }
}

/// Kernel matrix `K[i, j] = k(a_i, b_j)`.
pub fn gram_matrix(params: &KernelParams, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = (0..a.nrows())
        .into_par_iter()
        .map(|i| b.outer_iter().map(|bj| params.eval(a.row(i), bj)).collect())
        .collect();
    Array2::from_shape_vec((a.nrows(), b.nrows()), rows.concat()).expect("shape matches")
}

fn auto_gamma(x: ArrayView2<f64>) -> f64 {
    let d = x.ncols().max(1) as f64;
    let var = x.var(0.0);
    if var > 0.0 {
        1.0 / (d * var)
    } else {
        1.0 / d
    }
}

/// One binary soft-margin machine: `f(x) = Σ coef_i k(sv_i, x) − rho` over
/// the model's shared support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub class_code: usize,
    /// `α_i y_i` per shared support vector (zero where unused).
    pub coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub params: KernelParams,
    pub n_features: usize,
    pub support_vectors: Array2<f64>,
    pub machines: Vec<BinarySvm>,
    pub class_codes: Vec<usize>,
}

/// Dual solution of one binary problem.
#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `min ½ αᵀQα − Σα` s.t. `0 ≤ α ≤ c`, `yᵀα = 0`, `Q_ij = y_i y_j K_ij`
/// by SMO with second-order working-set selection.
pub(crate) fn solve_dual(k: ArrayView2<f64>, y: &[f64], c: f64, tol: f64) -> DualSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(1_000_000);
    let q = |i: usize, j: usize| y[i] * y[j] * k[[i, j]];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut g_min = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                g_min = g_min.min(v);
                let b = g_max - v;
                if b > 0.0 {
                    let a = k[[i, i]] + k[[t, t]] - 2.0 * k[[i, t]];
                    let a = if a > 0.0 { a } else { TAU };
                    let obj = -(b * b) / a;
                    if obj < obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || g_max - g_min < tol {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = {
            let a = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
            if a > 0.0 {
                a
            } else {
                TAU
            }
        };
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tolerance {tol}");
    }

    // rho: mean of y_t G_t over free vectors, else midpoint of the feasible range
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    DualSolution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

/// One-vs-rest soft-margin SVMs trained by SMO to KKT tolerance 1e-3 on a
/// shared precomputed kernel matrix.
pub fn svm_fit(x: ArrayView2<f64>, y: &[usize], cfg: &SvmConfig) -> Result<SvmModel, ClassifyError> {
    let class_codes = check_training(x, y)?;
    if class_codes.len() < 2 {
        return Err(ClassifyError::SingleClass);
    }
    if cfg.c.is_nan() || cfg.c <= 0.0 {
        return Err(ClassifyError::ConfigOutOfBounds(format!("C must be positive, got {}", cfg.c)));
    }
    let params = KernelParams {
        kernel: cfg.kernel,
        degree: cfg.degree,
        gamma: cfg.gamma.unwrap_or_else(|| auto_gamma(x)),
        coef0: cfg.coef0,
    };
    let k = gram_matrix(&params, x, x);
    let solutions: Vec<(usize, DualSolution)> = class_codes
        .par_iter()
        .map(|&code| {
            let yb: Vec<f64> = y.iter().map(|&v| if v == code { 1.0 } else { -1.0 }).collect();
            (code, solve_dual(k.view(), &yb, cfg.c, KKT_TOLERANCE))
        })
        .collect();

    let support: Vec<usize> = (0..y.len())
        .filter(|&t| solutions.iter().any(|(_, s)| s.alpha[t] > SUPPORT_EPS))
        .collect();
    let support_vectors = x.select(Axis(0), &support);
    let machines = solutions
        .into_iter()
        .map(|(code, s)| BinarySvm {
            class_code: code,
            coef: support
                .iter()
                .map(|&t| s.alpha[t] * if y[t] == code { 1.0 } else { -1.0 })
                .collect(),
            rho: s.rho,
            iterations: s.iterations,
            converged: s.converged,
        })
        .collect();
    Ok(SvmModel {
        params,
        n_features: x.ncols(),
        support_vectors,
        machines,
        class_codes,
    })
}

/// Per-class decision values, one column per entry of `class_codes`.
pub fn svm_decision_function(model: &SvmModel, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifyError> {
    check_query(model.n_features, x)?;
    let kq = gram_matrix(&model.params, x, model.support_vectors.view());
    let mut out = Array2::zeros((x.nrows(), model.machines.len()));
    for (c, m) in model.machines.iter().enumerate() {
        let coef = Array1::from(m.coef.clone());
        let col = kq.dot(&coef) - m.rho;
        out.column_mut(c).assign(&col);
    }
    Ok(out)
}

/// Argmax over decision values; ties go to the lower class code.
pub fn svm_predict(model: &SvmModel, x: ArrayView2<f64>) -> Result<Vec<usize>, ClassifyError> {
    let dv = svm_decision_function(model, x)?;
    Ok(dv
        .outer_iter()
        .map(|row| model.class_codes[argmax_low(row.as_slice().expect("row-major"))])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn accuracy(model: &SvmModel, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        let p = svm_predict(model, x).unwrap();
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn separable_line() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let y = [0, 0, 1, 1];
        let m = svm_fit(x.view(), &y, &SvmConfig::new(Kernel::Linear, 100.0)).unwrap();
        assert_eq!(accuracy(&m, x.view(), &y), 1.0);
        // boundary of the class-1 machine: w x − rho = 0
        let w: f64 = m.machines[1].coef.iter().zip(m.support_vectors.column(0)).map(|(a, s)| a * s).sum();
        let boundary = m.machines[1].rho / w;
        assert!(boundary > -1.0 && boundary < 1.0, "{boundary}");
    }

    #[test]
    fn conflicting_duplicates() {
        let x = array![[0.0], [0.0], [1.0], [-1.0]];
        let y = [0, 1, 1, 0];
        let m = svm_fit(x.view(), &y, &SvmConfig::new(Kernel::Linear, 1.0)).unwrap();
        assert!(accuracy(&m, x.view(), &y) < 1.0);
    }

    #[test]
    fn xor_rbf_with_kkt() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [0, 0, 1, 1];
        let cfg = SvmConfig {
            gamma: Some(1.0),
            ..SvmConfig::new(Kernel::Rbf, 10.0)
        };
        let m = svm_fit(x.view(), &y, &cfg).unwrap();
        assert_eq!(svm_predict(&m, x.view()).unwrap(), y.to_vec());

        // KKT: y f(x) >= 1 - tol where α = 0, = 1 where 0 < α < C, <= 1 where α = C
        let params = m.params;
        let k = gram_matrix(&params, x.view(), x.view());
        let yb: Vec<f64> = y.iter().map(|&v| if v == 0 { 1.0 } else { -1.0 }).collect();
        let sol = solve_dual(k.view(), &yb, 10.0, KKT_TOLERANCE);
        assert!(sol.converged);
        let sum_ya: f64 = sol.alpha.iter().zip(&yb).map(|(a, y)| a * y).sum();
        assert!(sum_ya.abs() < 1e-9);
        for t in 0..4 {
            let f: f64 = (0..4).map(|s| sol.alpha[s] * yb[s] * k[[s, t]]).sum::<f64>() - sol.rho;
            let margin = yb[t] * f;
            let a = sol.alpha[t];
            if a <= 0.0 {
                assert!(margin >= 1.0 - 2.0 * KKT_TOLERANCE, "{t}: {margin}");
            } else if a >= 10.0 {
                assert!(margin <= 1.0 + 2.0 * KKT_TOLERANCE, "{t}: {margin}");
            } else {
                assert!((margin - 1.0).abs() <= 2.0 * KKT_TOLERANCE, "{t}: {margin}");
            }
        }
    }

    #[test]
    fn empty_query_and_errors() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let m = svm_fit(x.view(), &[0, 0, 1, 1], &SvmConfig::new(Kernel::Linear, 1.0)).unwrap();
        assert!(svm_predict(&m, Array2::zeros((0, 1)).view()).unwrap().is_empty());
        assert!(matches!(
            svm_predict(&m, array![[1.0, 2.0]].view()),
            Err(ClassifyError::DimensionMismatch { expected: 1, got: 2 })
        ));
        assert!(matches!(
            svm_fit(x.view(), &[3, 3, 3, 3], &SvmConfig::new(Kernel::Linear, 1.0)),
            Err(ClassifyError::SingleClass)
        ));
    }

    #[test]
    fn auto_gamma_definition() {
        let x = array![[0.0, 2.0], [2.0, 0.0]];
        // entries 0, 2, 2, 0: variance 1, d = 2
        assert_eq!(auto_gamma(x.view()), 0.5);
    }
}
