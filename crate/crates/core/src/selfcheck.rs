//! Quick oracle and invariant checks on small instances.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cpc::{cpc_forward, infonce_loss, infonce_loss_and_grad, CpcBatch, CpcConfig, CpcModel};
use crate::dimred::pca_fit;
use crate::error::Result;
use crate::eval::{mcc, ConfusionCounts};
use crate::mal::{farthest_first, k_medoids, AffinityMatrix, Metric};
use crate::nn::{glorot_uniform, grad_check, ParamSet, Tensor2};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn random_affinity(n: usize, rng: &mut ChaCha8Rng) -> AffinityMatrix {
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
        }
    }
    AffinityMatrix::from_distances(n, d, Metric::Euclidean).expect("valid distances")
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

fn best_cost(a: &AffinityMatrix, k: usize) -> f64 {
    subsets(a.len(), k)
        .iter()
        .map(|m| (0..a.len()).map(|i| m.iter().map(|&j| a.get(i, j)).fold(f64::INFINITY, f64::min)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn check_mcc() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = ConfusionCounts::new(
            rng.random_range(0..50),
            rng.random_range(0..50),
            rng.random_range(0..50),
            rng.random_range(0..50),
        );
        if c.total() == 0 {
            continue;
        }
        let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        let want = if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den };
        worst = worst.max((mcc(&c)? - want).abs());
    }
    if worst > 1e-12 {
        return Err(crate::Error::Numeric(format!("max deviation {worst:e}")));
    }
    Ok(format!("1000 matrices, max deviation {worst:e}"))
}

fn check_kmedoids() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_ratio: f64 = 0.0;
    for inst in 0..30 {
        let n = rng.random_range(3..=8);
        let k = rng.random_range(1..=3.min(n));
        let a = random_affinity(n, &mut rng);
        let r = k_medoids(&a, k, inst)?;
        if r.cost_history.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            return Err(crate::Error::Numeric(format!("instance {inst}: cost increased")));
        }
        let opt = best_cost(&a, k);
        let ratio = if opt > 0.0 { r.cost / opt } else { 1.0 };
        worst_ratio = worst_ratio.max(ratio);
    }
    if worst_ratio > 1.2 {
        return Err(crate::Error::Numeric(format!("cost ratio {worst_ratio:.3} > 1.2")));
    }
    Ok(format!("30 instances, worst cost / optimum = {worst_ratio:.4}"))
}

fn check_farthest_first() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for inst in 0..50 {
        let n = rng.random_range(2..=15);
        let a = random_affinity(n, &mut rng);
        let k = rng.random_range(1..=n);
        let picks = farthest_first(&a, k, inst)?;
        for p in 1..picks.len() {
            let mind = |c: usize| picks[..p].iter().map(|&s| a.get(c, s)).fold(f64::INFINITY, f64::min);
            let got = mind(picks[p]);
            if (0..n).filter(|c| !picks[..p].contains(c)).any(|c| mind(c) > got) {
                return Err(crate::Error::Numeric(format!("instance {inst}: pick {p} is not farthest")));
            }
        }
    }
    Ok("50 instances replayed".into())
}

fn tiny_cpc(seed: u64) -> (CpcModel, CpcBatch) {
    let cfg = CpcConfig {
        input_dim: 3,
        latent_dim: 4,
        context_dim: 4,
        encoder_layers: 2,
        steps: 3,
        dropout: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = CpcModel::new(cfg, &mut rng);
    let frames = (0..3).map(|_| glorot_uniform(9, 3, &mut rng)).collect();
    (model, CpcBatch::unpadded(frames).expect("equal lengths"))
}

fn check_infonce() -> Result<String> {
    let (model, batch) = tiny_cpc(4);
    let (z, c) = cpc_forward(&model, &batch)?;
    let (b, t_len, steps) = (batch.size(), batch.len_frames(), model.config.steps);
    let mut per_step = Vec::new();
    for k in 1..=steps {
        let mut terms = Vec::new();
        for i in 0..b {
            for t in 0..t_len - steps {
                let pred = Tensor2::from_vec(1, c[i].cols(), c[i].row(t).to_vec())?.matmul(&model.predictors[k - 1])?;
                let scores: Vec<f64> = (0..b).map(|j| crate::nn::dot(pred.row(0), z[j].row(t + k))).collect();
                let denom: f64 = scores.iter().map(|s| s.exp()).sum();
                terms.push(-(scores[i].exp() / denom).ln());
            }
        }
        per_step.push(terms.iter().sum::<f64>() / terms.len() as f64);
    }
    let want = per_step.iter().sum::<f64>() / per_step.len() as f64;
    let got = infonce_loss::<ChaCha8Rng>(&model, &batch, None)?;
    if (got - want).abs() > 1e-10 {
        return Err(crate::Error::Numeric(format!("loss {got} vs brute force {want}")));
    }
    let uniform = infonce_loss::<ChaCha8Rng>(&CpcModel::zeros(model.config), &batch, None)?;
    if uniform != (b as f64).ln() {
        return Err(crate::Error::Numeric(format!("uniform loss {uniform} != ln {b}")));
    }
    Ok(format!("brute-force deviation {:e}; uniform case = ln {b}", (got - want).abs()))
}

fn check_gradients() -> Result<String> {
    let (model, batch) = tiny_cpc(5);
    let (_, g) = infonce_loss_and_grad::<ChaCha8Rng>(&model, &batch, None)?;
    let params = model.flatten();
    let report = grad_check(
        |p| {
            let mut m = model.clone();
            m.assign_flat(p)?;
            infonce_loss::<ChaCha8Rng>(&m, &batch, None)
        },
        &params,
        &g.flatten(),
        1e-5,
        None,
    )?;
    if report.max_rel_error >= 1e-4 {
        return Err(crate::Error::Numeric(format!("max relative error {:e}", report.max_rel_error)));
    }
    Ok(format!("{} coordinates, max relative error {:e}", report.checked, report.max_rel_error))
}

fn check_pca() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = glorot_uniform(30, 6, &mut rng);
    let m = pca_fit(&x, 6)?;
    let gram = m.components.matmul_tn(&m.components)?;
    let mut dev: f64 = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let want = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - want).abs());
        }
    }
    let sorted = m.explained_variance.windows(2).all(|w| w[0] >= w[1]);
    if dev >= 1e-8 || !sorted {
        return Err(crate::Error::Numeric(format!("orthonormality deviation {dev:e}, sorted {sorted}")));
    }
    Ok(format!("orthonormality deviation {dev:e}"))
}

/// Runs every check; never panics on a failing check.
pub fn run_selfcheck() -> Vec<CheckOutcome> {
    let checks: [(&'static str, fn() -> Result<String>); 6] = [
        ("mcc_formula", check_mcc),
        ("kmedoids_exhaustive", check_kmedoids),
        ("farthest_first_replay", check_farthest_first),
        ("infonce_brute_force", check_infonce),
        ("cpc_gradients", check_gradients),
        ("pca_orthonormal", check_pca),
    ];
    checks
        .iter()
        .map(|&(name, f)| {
            let t = Instant::now();
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(e) => (false, e.to_string()),
            };
            CheckOutcome { name, passed, detail, seconds: t.elapsed().as_secs_f64() }
        })
        .collect()
}
