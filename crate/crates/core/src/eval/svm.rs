//! Soft-margin RBF SVM trained with sequential minimal optimization.
//!
//! Working-set selection uses second-order information (maximal violating
//! `i`, then the `j` with the largest guaranteed objective decrease). The
//! full kernel matrix is precomputed, which is fine at desk scale.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Result};
use crate::nn::Tensor2;

pub const KKT_TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[inline]
pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Tensor2,
    /// `α_i · y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub gamma: f64,
    /// Set when training saw a single class; the model then always predicts it.
    pub constant: Option<i8>,
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `Σα − ½ αᵀQα` after each SMO step.
    pub objective_history: Vec<f64>,
    /// Final maximal KKT violation `m(α) − M(α)`.
    pub kkt_gap: f64,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.cols()
    }

    pub fn is_degenerate(&self) -> bool {
        self.constant.is_some()
    }

    pub fn decision_function(&self, features: &Tensor2) -> Result<Vec<f64>> {
        if self.constant.is_none() && features.cols() != self.dim() {
            return Err(shape_err!(
                "model trained on {} features, got {}",
                self.dim(),
                features.cols()
            ));
        }
        if let Some(c) = self.constant {
            return Ok(vec![c as f64; features.rows()]);
        }
        Ok(features
            .iter_rows()
            .map(|x| {
                self.support_vectors
                    .iter_rows()
                    .zip(&self.dual_coef)
                    .map(|(sv, &a)| a * rbf(sv, x, self.gamma))
                    .sum::<f64>()
                    + self.bias
            })
            .collect())
    }
}

fn check_labels(labels: &[i8]) -> Result<()> {
    if let Some(i) = labels.iter().position(|&y| y != 1 && y != -1) {
        return Err(input_err!("label {} at position {i} is not ±1", labels[i]));
    }
    Ok(())
}

/// Trains on `features` with labels in {−1, +1}.
///
/// A single-class training set yields a constant predictor instead of an error.
pub fn svm_train(features: &Tensor2, labels: &[i8], c: f64, gamma: f64) -> Result<SvmModel> {
    let n = features.rows();
    if n == 0 || labels.len() != n {
        return Err(shape_err!("{n} samples with {} labels", labels.len()));
    }
    check_labels(labels)?;
    if !(c > 0.0) || !(gamma > 0.0) {
        return Err(input_err!("C and gamma must be positive (C={c}, gamma={gamma})"));
    }
    if !features.is_finite() {
        return Err(input_err!("training features contain non-finite values"));
    }
    let degenerate = |class: i8| SvmModel {
        support_vectors: Tensor2::zeros(0, features.cols()),
        dual_coef: vec![],
        bias: class as f64,
        c,
        gamma,
        constant: Some(class),
        iterations: 0,
        converged: true,
        objective_history: vec![],
        kkt_gap: 0.0,
    };
    if labels.iter().all(|&y| y == labels[0]) {
        return Ok(degenerate(labels[0]));
    }

    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        kernel[i * n + i] = 1.0;
        for j in 0..i {
            let k = rbf(features.row(i), features.row(j), gamma);
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let max_iter = (100 * n).max(100_000);
    let mut objective_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt_gap;

    loop {
        // select i: maximal violating index in I_up
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            if in_up {
                let v = -y[t] * grad[t];
                if v > g_max {
                    g_max = v;
                    i_sel = t;
                }
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
                if !in_low {
                    continue;
                }
                let v = y[t] * grad[t];
                if v > g_max2 {
                    g_max2 = v;
                }
                let grad_diff = g_max + v;
                if grad_diff > 0.0 {
                    let mut quad = 2.0 - 2.0 * kernel[i * n + t];
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj < best_obj {
                        best_obj = obj;
                        j_sel = t;
                    }
                }
            }
        }
        kkt_gap = g_max + g_max2;
        if i_sel == usize::MAX || j_sel == usize::MAX || kkt_gap < KKT_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = 2.0 + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
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
            let mut quad = 2.0 - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
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
        for k in 0..n {
            grad[k] += q(i, k) * di + q(j, k) * dj;
        }
        // f(α) = ½ αᵀQα − eᵀα = ½ Σ α_k (G_k − 1); the dual objective is −f
        let f: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() * 0.5;
        objective_history.push(-f);
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        support_vectors: features.select_rows(&sv),
        dual_coef: sv.iter().map(|&t| alpha[t] * y[t]).collect(),
        bias: -rho,
        c,
        gamma,
        constant: None,
        iterations,
        converged,
        objective_history,
        kkt_gap,
    })
}

/// Sign of the decision function; exact zeros map to +1.
pub fn svm_predict(model: &SvmModel, features: &Tensor2) -> Result<Vec<i8>> {
    Ok(model
        .decision_function(features)?
        .into_iter()
        .map(|v| if v >= 0.0 { 1 } else { -1 })
        .collect())
}
