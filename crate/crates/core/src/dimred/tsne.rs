use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pca::{pca_fit, pca_transform};
use crate::error::{input_err, Result};
use crate::nn::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsneInit {
    /// 2-D PCA of the input, scaled so the first column has std 1e-4.
    Pca,
    /// Gaussian with std 1e-4 drawn from the config seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub init: TsneInit,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            iterations: 1000,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            init: TsneInit::Pca,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    pub embedding: Tensor2,
    /// KL(P‖Q) against the unexaggerated P, one entry per iteration.
    pub kl_history: Vec<f64>,
}

impl TsneResult {
    pub fn final_kl(&self) -> f64 {
        self.kl_history.last().copied().unwrap_or(f64::NAN)
    }
}

const MIN_POINTS: usize = 10;
const PERPLEXITY_TOL: f64 = 1e-5;
const PROB_FLOOR: f64 = 1e-12;

fn squared_distances(x: &Tensor2) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = x.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    d
}

/// Conditional distribution of row `i` whose entropy matches `ln(perplexity)`.
fn conditional_row(dist: &[f64], i: usize, perplexity: f64, out: &mut [f64]) {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
    // shift by the smallest off-diagonal distance for numerical range
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, o) in out.iter_mut().enumerate() {
            if j == i {
                *o = 0.0;
                continue;
            }
            let e = (-(dist[j] - dmin) * beta).exp();
            *o = e;
            sum += e;
            weighted += (dist[j] - dmin) * e;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        for o in out.iter_mut() {
            *o /= sum;
        }
        let diff = entropy - target;
        if diff.abs() < PERPLEXITY_TOL {
            return;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
}

/// Symmetrized joint probabilities `p_ij = (p_j|i + p_i|j) / 2N`.
pub fn joint_probabilities(x: &Tensor2, perplexity: f64) -> Vec<f64> {
    let n = x.rows();
    let dist = squared_distances(x);
    let mut cond = vec![0.0; n * n];
    cond.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| conditional_row(&dist[i * n..(i + 1) * n], i, perplexity, row));
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

fn initial_embedding(x: &Tensor2, config: &TsneConfig) -> Result<Tensor2> {
    let n = x.rows();
    match config.init {
        TsneInit::Pca => {
            let mut y = pca_transform(&pca_fit(x, 2.min(x.cols()))?, x)?;
            if y.cols() < 2 {
                let mut wide = Tensor2::zeros(n, 2);
                for i in 0..n {
                    wide[(i, 0)] = y[(i, 0)];
                }
                y = wide;
            }
            let mean = (0..n).map(|i| y[(i, 0)]).sum::<f64>() / n as f64;
            let std = ((0..n).map(|i| (y[(i, 0)] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let s = if std > 0.0 { 1e-4 / std } else { 1.0 };
            y.scale(s);
            Ok(y)
        }
        TsneInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let normal = Normal::new(0.0, 1e-4).expect("valid normal");
            let data = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
            Tensor2::from_vec(n, 2, data)
        }
    }
}

/// Exact-gradient t-SNE into two dimensions.
pub fn tsne_embed(x: &Tensor2, config: &TsneConfig) -> Result<TsneResult> {
    let n = x.rows();
    if n < MIN_POINTS {
        return Err(input_err!("t-SNE needs at least {MIN_POINTS} points, got {n}"));
    }
    if !(config.perplexity > 0.0) || 3.0 * config.perplexity >= n as f64 {
        return Err(input_err!(
            "perplexity {} too large for {n} points (must be below N/3)",
            config.perplexity
        ));
    }
    if !x.is_finite() {
        return Err(input_err!("t-SNE input contains non-finite values"));
    }
    let p = joint_probabilities(x, config.perplexity);
    let mut y = initial_embedding(x, config)?;
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut kl_history = Vec::with_capacity(config.iterations);
    let mut num = vec![0.0; n * n];

    for iter in 0..config.iterations {
        let early = iter < config.exaggeration_iters;
        let exag = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { config.momentum_initial } else { config.momentum_final };

        num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let (yi0, yi1) = (y[(i, 0)], y[(i, 1)]);
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j {
                    0.0
                } else {
                    let (a, b) = (yi0 - y[(j, 0)], yi1 - y[(j, 1)]);
                    1.0 / (1.0 + a * a + b * b)
                };
            }
        });
        // per-row sums in parallel, combined in a fixed order
        let row_sums: Vec<f64> = num.par_chunks(n).map(|r| r.iter().sum::<f64>()).collect();
        let z: f64 = row_sums.iter().sum();

        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = num[i * n + j];
                    let m = (exag * p[i * n + j] - w / z) * w;
                    g[0] += m * (y[(i, 0)] - y[(j, 0)]);
                    g[1] += m * (y[(i, 1)] - y[(j, 1)]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();

        let kl_rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for j in 0..n {
                    let pij = p[i * n + j];
                    if i != j && pij > 0.0 {
                        let q = (num[i * n + j] / z).max(PROB_FLOOR);
                        s += pij * (pij.max(PROB_FLOOR) / q).ln();
                    }
                }
                s
            })
            .collect();
        kl_history.push(kl_rows.iter().sum());

        for i in 0..n {
            for d in 0..2 {
                let k = 2 * i + d;
                let g = grad[i][d];
                gains[k] = if (g > 0.0) != (update[k] > 0.0) { gains[k] + 0.2 } else { gains[k] * 0.8 };
                gains[k] = gains[k].max(0.01);
                update[k] = momentum * update[k] - config.learning_rate * gains[k] * g;
                y[(i, d)] += update[k];
            }
        }
    }
    Ok(TsneResult { embedding: y, kl_history })
}
