//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments
//! (`cargo test --test acceptance -- 3 5`) to run a subset.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use cpcal::audio::{functionals_600, LogMelFrames, FUNCTIONALS_DIM, N_MELS};
use cpcal::cpc::{
    extract_cpc_features, infonce_loss, infonce_loss_and_grad, train_cpc, CpcBatch, CpcConfig, CpcModel,
    CpcTrainConfig,
};
use cpcal::dimred::{
    ae_loss_and_grad, pca_fit, pca_inverse, pca_transform, tsne_embed, AeConfig, AeModel, Reducer, TsneConfig,
};
use cpcal::eval::{mcc, paired_t, ConfusionCounts};
use cpcal::harness::{
    run_experiment, CsvSource, DatasetSource, ExperimentConfig, ExperimentReport, RunOptions, Strategy, SynthSpec,
    Task,
};
use cpcal::mal::{farthest_first, k_medoids};
use cpcal::nn::{
    dropout_mask, glorot_uniform, grad_check, hadamard, mse, Activation, DenseCache, DenseLayer, GruCache, GruCell,
    ParamSet, Tensor2, TrainSchedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------------
// 1. gradients

/// Dense ELU encoder with a fixed dropout mask, a GRU scan and a linear head under MSE.
#[derive(Clone)]
struct Stack {
    enc: DenseLayer,
    gru: GruCell,
    head: DenseLayer,
}

impl ParamSet for Stack {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor2)) {
        self.enc.for_each_param(f);
        self.gru.for_each_param(f);
        self.head.for_each_param(f);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2)) {
        self.enc.for_each_param_mut(f);
        self.gru.for_each_param_mut(f);
        self.head.for_each_param_mut(f);
    }
}

struct StackInput {
    steps: Vec<Tensor2>,
    masks: Vec<Tensor2>,
    target: Tensor2,
}

fn stack_loss(s: &Stack, inp: &StackInput, grads: Option<&mut Stack>) -> f64 {
    let b = inp.target.rows();
    let mut h = Tensor2::zeros(b, s.gru.hidden_dim());
    let mut enc_caches: Vec<DenseCache> = Vec::new();
    let mut gru_caches: Vec<GruCache> = Vec::new();
    for (x, m) in inp.steps.iter().zip(&inp.masks) {
        let (a, c) = s.enc.forward_cached(x).unwrap();
        let (next, gc) = s.gru.step_batch(&hadamard(&a, m), &h).unwrap();
        enc_caches.push(c);
        gru_caches.push(gc);
        h = next;
    }
    let (y, head_cache) = s.head.forward_cached(&h).unwrap();
    let (loss, dy) = mse(&y, &inp.target).unwrap();
    if let Some(g) = grads {
        let mut dh = s.head.backward(&h, &head_cache, &dy, &mut g.head).unwrap();
        for t in (0..inp.steps.len()).rev() {
            let (dz, dprev) = s.gru.backward_step(&gru_caches[t], &dh, &mut g.gru).unwrap();
            let da = hadamard(&dz, &inp.masks[t]);
            s.enc.backward(&inp.steps[t], &enc_caches[t], &da, &mut g.enc).unwrap();
            dh = dprev;
        }
    }
    loss
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..5 {
        let (d, e, hdim, o) = (rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6), rng.random_range(1..4));
        let (b, t) = (rng.random_range(1..4), rng.random_range(2..5));
        let mut stack = Stack {
            enc: DenseLayer::new(d, e, Activation::Elu, &mut rng),
            gru: GruCell::new(e, hdim, &mut rng),
            head: DenseLayer::new(hdim, o, Activation::Identity, &mut rng),
        };
        // non-zero biases so every parameter has a generic gradient
        let mut flat = stack.flatten();
        flat.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        stack.assign_flat(&flat).unwrap();
        let inp = StackInput {
            steps: (0..t).map(|_| glorot_uniform(b, d, &mut rng).map(|v| 3.0 * v)).collect(),
            masks: (0..t).map(|_| dropout_mask(b, e, 0.3, &mut rng)).collect(),
            target: glorot_uniform(b, o, &mut rng),
        };
        let mut g = stack.clone();
        g.zero_all();
        stack_loss(&stack, &inp, Some(&mut g));
        let report = grad_check(
            |p| {
                let mut s = stack.clone();
                s.assign_flat(p)?;
                Ok(stack_loss(&s, &inp, None))
            },
            &flat,
            &g.flatten(),
            1e-5,
            None,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }

    // contrastive loss with dropout: the same seed reproduces the same masks
    for seed in 0..3u64 {
        let cfg = CpcConfig { input_dim: 3, latent_dim: 4, context_dim: 3, encoder_layers: 2, steps: 2, dropout: 0.2 };
        let model = CpcModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let frames = (0..3).map(|_| glorot_uniform(7, 3, &mut rng)).collect();
        let batch = CpcBatch::unpadded(frames).unwrap();
        let (_, g) = infonce_loss_and_grad(&model, &batch, Some(&mut ChaCha8Rng::seed_from_u64(seed + 50))).unwrap();
        let report = grad_check(
            |p| {
                let mut m = model.clone();
                m.assign_flat(p)?;
                infonce_loss(&m, &batch, Some(&mut ChaCha8Rng::seed_from_u64(seed + 50)))
            },
            &model.flatten(),
            &g.flatten(),
            1e-5,
            None,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }

    // autoencoder under MSE with fixed masks on the dropout layers
    let cfg = AeConfig { input_dim: 5, hidden: 6, bottleneck: 2, dropout: 0.1 };
    let ae = AeModel::new(cfg, &mut rng);
    let x = glorot_uniform(4, 5, &mut rng).map(|v| 2.0 * v);
    let masks: Vec<Option<Tensor2>> = ae
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| (i != 2 && i != 5).then(|| dropout_mask(4, l.out_dim(), 0.1, &mut rng)))
        .collect();
    let (_, g) = ae_loss_and_grad(&ae, &x, &masks).unwrap();
    let report = grad_check(
        |p| {
            let mut m = ae.clone();
            m.assign_flat(p)?;
            Ok(ae_loss_and_grad(&m, &x, &masks)?.0)
        },
        &ae.flatten(),
        &g.flatten(),
        1e-5,
        None,
    )
    .map_err(|e| e.to_string())?;
    worst = worst.max(report.max_rel_error);
    checked += report.checked;

    ensure(worst < 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!("{checked} coordinates, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 2. contrastive loss oracle

fn criterion_infonce() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for b in 2..=4 {
        for _ in 0..8 {
            let t = rng.random_range(3..=20);
            let cfg = CpcConfig {
                input_dim: rng.random_range(1..=8),
                latent_dim: rng.random_range(1..=8),
                context_dim: rng.random_range(1..=8),
                encoder_layers: rng.random_range(1..=3),
                steps: rng.random_range(1..t),
                dropout: 0.0,
            };
            let model = CpcModel::new(cfg, &mut rng);
            let frames = (0..b).map(|_| glorot_uniform(t, cfg.input_dim, &mut rng).map(|v| 4.0 * v)).collect();
            let batch = CpcBatch::unpadded(frames).unwrap();
            let got = infonce_loss::<ChaCha8Rng>(&model, &batch, None).map_err(|e| e.to_string())?;
            worst = worst.max((got - infonce_brute_force(&model, &batch)).abs());
            let uniform = infonce_loss::<ChaCha8Rng>(&CpcModel::zeros(cfg), &batch, None).unwrap();
            ensure(uniform == (b as f64).ln(), format!("uniform loss {uniform} != ln {b}"))?;
            cases += 1;
        }
    }
    ensure(worst <= 1e-10, format!("max deviation {worst:e}"))?;
    Ok(format!("{cases} cases, max deviation {worst:.1e}; uniform case equals ln B"))
}

// ---------------------------------------------------------------------------
// 3. k-medoids against exhaustive search

fn criterion_kmedoids() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(1..=3.min(n));
        let a = random_planar_affinity(n, &mut rng);
        let r = k_medoids(&a, k, inst).map_err(|e| format!("instance {inst}: {e}"))?;
        ensure(
            r.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            format!("instance {inst}: cost increased"),
        )?;
        let opt = exhaustive_kmedoids_cost(&a, k);
        worst = worst.max(if opt > 0.0 { r.cost / opt } else { 1.0 });
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst <= 1.2, format!("cost ratio {worst:.3}"))?;
    ensure(secs < 10.0, format!("took {secs:.1} s"))?;
    Ok(format!("50/50 terminated, worst cost/optimum {worst:.4}, {secs:.2} s"))
}

// ---------------------------------------------------------------------------
// 4. farthest-first replay

fn criterion_farthest_first() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for inst in 0..100u64 {
        let n = rng.random_range(2..=20);
        let a = random_planar_affinity(n, &mut rng);
        let k = rng.random_range(1..=n);
        let picks = farthest_first(&a, k, inst).map_err(|e| e.to_string())?;
        ensure(picks.len() == k, format!("instance {inst}: {} picks for k={k}", picks.len()))?;
        for p in 1..k {
            let mind = |c: usize| picks[..p].iter().map(|&s| a.get(c, s)).fold(f64::INFINITY, f64::min);
            let chosen = mind(picks[p]);
            if let Some(c) = (0..n).filter(|c| !picks[..p].contains(c)).find(|&c| mind(c) > chosen) {
                return Err(format!("instance {inst}: pick {p} beaten by candidate {c}"));
            }
        }
    }
    Ok("100 instances replayed exactly".into())
}

// ---------------------------------------------------------------------------
// 5. MCC

fn criterion_mcc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let c = ConfusionCounts::new(
            rng.random_range(0..100),
            rng.random_range(0..100),
            rng.random_range(0..100),
            rng.random_range(0..100),
        );
        if c.total() == 0 {
            continue;
        }
        let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        let want = if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den };
        worst = worst.max((mcc(&c).unwrap() - want).abs());
        n += 1;
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    let m = |tp, tn, fp, fn_| mcc(&ConfusionCounts::new(tp, tn, fp, fn_)).unwrap();
    ensure(m(7, 5, 0, 0) == 1.0, "perfect != 1")?;
    ensure(m(0, 0, 5, 7) == -1.0, "inverted != -1")?;
    ensure(m(5, 5, 5, 5) == 0.0, "chance-symmetric != 0")?;
    ensure(m(10, 0, 3, 0) == 0.0 && m(0, 4, 0, 0) == 0.0, "zero denominator != 0")?;
    Ok(format!("1000 matrices, max deviation {worst:.1e}; special cases exact"))
}

// ---------------------------------------------------------------------------
// 6. feature dimensions and padding invariance

fn criterion_feature_dims() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for case in 0..20 {
        let t = rng.random_range(3..300);
        let scale = rng.random_range(0.01..50.0);
        let frames = glorot_uniform(t, N_MELS, &mut rng).map(|v| scale * v - 5.0);
        let f = functionals_600("u", &LogMelFrames::from_frames(frames, 16_000)).map_err(|e| e.to_string())?;
        ensure(f.vector.len() == FUNCTIONALS_DIM && FUNCTIONALS_DIM == 600, format!("case {case}: {} dims", f.vector.len()))?;
        ensure(f.vector.iter().all(|v| v.is_finite()), format!("case {case}: non-finite functional"))?;
    }
    let static_dims = 7 * N_MELS;
    ensure(static_dims == 280 && FUNCTIONALS_DIM - static_dims == 320, "static/delta split")?;

    let model = CpcModel::new(CpcConfig::default(), &mut rng);
    for case in 0..5 {
        let t = rng.random_range(1..60);
        let real = glorot_uniform(t, N_MELS, &mut rng);
        let plain = extract_cpc_features(&model, "u", &LogMelFrames::from_frames(real.clone(), 16_000)).unwrap();
        ensure(plain.vector.len() == 256, format!("CPC feature has {} dims", plain.vector.len()))?;
        let pad = rng.random_range(1..40);
        let mut data = real.into_data();
        data.extend(std::iter::repeat_n(0.0, pad * N_MELS));
        let padded = LogMelFrames {
            frames: Tensor2::from_vec(t + pad, N_MELS, data).unwrap(),
            sample_rate: 16_000,
            valid_frames: t,
        };
        let p = extract_cpc_features(&model, "u", &padded).unwrap();
        ensure(p.vector == plain.vector, format!("case {case}: padding changed the CPC feature"))?;
    }
    Ok("functionals 600 = 280 + 320 on 20 inputs; CPC features 256-d and padding-invariant".into())
}

// ---------------------------------------------------------------------------
// 7. PCA

fn criterion_pca() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut orth, mut recon): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let d = rng.random_range(2..12);
        let n = rng.random_range(d + 1..60);
        let x = glorot_uniform(n, d, &mut rng).map(|v| 10.0 * v + 1.0);
        let m = pca_fit(&x, d).map_err(|e| e.to_string())?;
        let gram = m.components.matmul_tn(&m.components).unwrap();
        for i in 0..d {
            for j in 0..d {
                orth = orth.max((gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        ensure(m.explained_variance.windows(2).all(|w| w[0] >= w[1]), "explained variance not descending")?;
        let back = pca_inverse(&m, &pca_transform(&m, &x).unwrap()).unwrap();
        recon = recon.max(x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(orth < 1e-8 && recon < 1e-8, format!("orthonormality {orth:e}, reconstruction {recon:e}"))?;
    Ok(format!("orthonormality deviation {orth:.1e}, full-rank reconstruction {recon:.1e}"))
}

// ---------------------------------------------------------------------------
// 8. t-SNE

fn criterion_tsne() -> Outcome {
    let started = Instant::now();
    let mut good = 0;
    let mut scores = Vec::new();
    for seed in 0..10u64 {
        let (x, labels) = gaussian_blobs(3, 100, 32, 10.0, seed);
        let cfg = TsneConfig { seed, ..TsneConfig::default() };
        let r = tsne_embed(&x, &cfg).map_err(|e| e.to_string())?;
        let s = silhouette(&r.embedding, &labels);
        let kl_after_exaggeration = r.kl_history[cfg.exaggeration_iters - 1];
        ensure(
            r.final_kl() < kl_after_exaggeration,
            format!("seed {seed}: final KL {} >= {kl_after_exaggeration}", r.final_kl()),
        )?;
        if s > 0.5 {
            good += 1;
        }
        scores.push(format!("{s:.2}"));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(good >= 9, format!("silhouette > 0.5 in {good}/10 seeds ({})", scores.join(" ")))?;
    ensure(secs < 120.0, format!("took {secs:.0} s"))?;
    Ok(format!("silhouette > 0.5 in {good}/10 seeds [{}], KL decreases after exaggeration, {secs:.0} s", scores.join(" ")))
}

// ---------------------------------------------------------------------------
// 9 and 10. trends on the four-quadrant data

const TREND_SEEDS: u64 = 20;

fn base_config(dataset: DatasetSource, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{"dataset":{"synth":{"blobs":4,"per_blob":10,"dim":4,"separation":4.0,"label_noise":0.0,"background":0.0,"seed":0}},
            "features":["raw"],"reducers":["none"],"master_seed":0,"repeats":1}"#,
        "acceptance base",
    )
    .map(|mut c| {
        c.dataset = dataset;
        c.master_seed = seed;
        c
    })
    .expect("base config parses")
}

fn run(config: &ExperimentConfig) -> ExperimentReport {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(config, &RunOptions::new(dir.path())).expect("experiment runs")
}

/// Per-seed mean MCC over folds and tasks.
fn seed_mean(rep: &ExperimentReport, reducer: Reducer, budget: f64, strategy: Strategy) -> f64 {
    let v: Vec<f64> = rep
        .records
        .iter()
        .filter(|r| r.reducer == reducer && r.budget == budget && r.strategy == strategy)
        .map(|r| r.mcc.expect("no failed cells"))
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

struct TrendRuns {
    full: Vec<ExperimentReport>,
    pca: Vec<ExperimentReport>,
    seconds: f64,
}

fn trend_runs() -> TrendRuns {
    let started = Instant::now();
    let mut full = Vec::new();
    let mut pca = Vec::new();
    for seed in 0..TREND_SEEDS {
        let dataset = DatasetSource::Synth(SynthSpec::four_quadrant(seed));
        let mut cfg = base_config(dataset.clone(), seed);
        cfg.budgets = vec![1.0, 2.0, 5.0, 50.0];
        cfg.strategies = vec![Strategy::Mal, Strategy::Random];
        full.push(run(&cfg));
        cfg.reducers = vec![Reducer::Pca32];
        cfg.budgets = vec![5.0, 50.0];
        cfg.strategies = vec![Strategy::Mal];
        pca.push(run(&cfg));
    }
    TrendRuns { full, pca, seconds: started.elapsed().as_secs_f64() }
}

fn criterion_trend(runs: &TrendRuns) -> Outcome {
    let mut lines = Vec::new();
    for budget in [1.0, 2.0, 5.0, 50.0] {
        let mal: Vec<f64> = runs.full.iter().map(|r| seed_mean(r, Reducer::None, budget, Strategy::Mal)).collect();
        let rnd: Vec<f64> = runs.full.iter().map(|r| seed_mean(r, Reducer::None, budget, Strategy::Random)).collect();
        let t = paired_t(&mal, &rnd).unwrap();
        lines.push(format!("{budget}%: {:+.3} (p={:.3})", t.mean_diff, t.p_value));
        if budget < 50.0 {
            ensure(t.mean_diff > 0.0 && t.p_value < 0.05, format!("MAL not ahead at {budget}%: {}", lines.join(", ")))?;
        } else {
            ensure(t.p_value >= 0.05, format!("gap at 50% is significant: {}", lines.join(", ")))?;
        }
    }
    ensure(runs.seconds < 1800.0, format!("took {:.0} s", runs.seconds))?;
    Ok(format!("{TREND_SEEDS} seeds, MAL − random {}", lines.join(", ")))
}

fn criterion_dim_robustness(runs: &TrendRuns) -> Outcome {
    let mut lines = Vec::new();
    for budget in [5.0, 50.0] {
        let full: f64 = runs.full.iter().map(|r| seed_mean(r, Reducer::None, budget, Strategy::Mal)).sum::<f64>()
            / TREND_SEEDS as f64;
        let pca: f64 = runs.pca.iter().map(|r| seed_mean(r, Reducer::Pca32, budget, Strategy::Mal)).sum::<f64>()
            / TREND_SEEDS as f64;
        lines.push(format!("{budget}%: full {full:.3} pca32 {pca:.3}"));
        ensure((full - pca).abs() <= 0.05, format!("gap above 0.05: {}", lines.join(", ")))?;
    }
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------------------
// 11. CPC trainability and feature quality

fn small_cpc() -> CpcTrainConfig {
    CpcTrainConfig {
        model: CpcConfig { input_dim: N_MELS, latent_dim: 32, context_dim: 32, encoder_layers: 2, steps: 4, dropout: 0.0 },
        schedule: TrainSchedule {
            initial_lr: 1e-3,
            reduce_factor: Some(0.7),
            reduce_patience: 5,
            early_stop_patience: 10,
            max_epochs: 30,
        },
        batch_size: 8,
        segment_frames: 60,
        val_fraction: 0.2,
    }
}

fn criterion_cpc() -> Outcome {
    let chance = 8f64.ln();
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let (utts, classes) = moving_bumps(&BumpSpec::default(), seed);
        let trained = train_cpc(&utts, &small_cpc(), seed).map_err(|e| e.to_string())?;
        ensure(
            trained.best_val_loss < 0.9 * chance,
            format!("seed {seed}: validation loss {:.3} >= 0.9 ln 8", trained.best_val_loss),
        )?;
        let cpc: Vec<Vec<f64>> =
            utts.iter().map(|u| extract_cpc_features(&trained.model, "u", u).unwrap().vector).collect();
        let raw: Vec<Vec<f64>> = utts.iter().map(mean_frame).collect();
        let sets = BTreeMap::from([
            ("cpc".to_string(), Tensor2::from_rows(&cpc).unwrap()),
            ("raw".to_string(), Tensor2::from_rows(&raw).unwrap()),
        ]);
        let dir = tempfile::tempdir().unwrap();
        two_class_dataset(&utts, &classes, sets).write_csv(dir.path()).unwrap();
        let path = |n: &str| dir.path().join(n);
        let source = CsvSource {
            features: ["cpc", "raw"].iter().map(|n| (n.to_string(), path(&format!("features_{n}.csv")))).collect(),
            classifier: Some(path("features_classifier.csv")),
            labels: path("labels.csv"),
            labelmap: Some(path("labelmap.json")),
        };
        let mut cfg = base_config(DatasetSource::Csv(source), seed);
        cfg.features = vec!["cpc".into(), "raw".into()];
        cfg.budgets = vec![2.0];
        cfg.tasks = vec![Task::Valence];
        cfg.strategies = vec![Strategy::Mal];
        let rep = run(&cfg);
        let mean = |f: &str| {
            let v: Vec<f64> = rep.records.iter().filter(|r| r.feature == f).map(|r| r.mcc.unwrap()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (c, r) = (mean("cpc"), mean("raw"));
        if c > r {
            wins += 1;
        }
        notes.push(format!("{:.2}/{c:.2}/{r:.2}", trained.best_val_loss));
    }
    ensure(wins >= 7, format!("CPC MAL ahead in {wins}/10 seeds (val/cpc/raw: {})", notes.join(" ")))?;
    Ok(format!("val loss < 0.9 ln 8 in 10/10, CPC MAL ahead in {wins}/10 (val/cpc/raw: {})", notes.join(" ")))
}

// ---------------------------------------------------------------------------
// 12. determinism

fn criterion_determinism() -> Outcome {
    let mut spec = SynthSpec::four_quadrant(9);
    spec.per_blob = 40;
    let mut cfg = base_config(DatasetSource::Synth(spec), 9);
    cfg.reducers = vec![Reducer::None, Reducer::Pca32, Reducer::Ae2, Reducer::Tsne2];
    cfg.reducer_options.ae_schedule.max_epochs = 5;
    cfg.reducer_options.ae_hidden = 16;
    cfg.reducer_options.tsne.iterations = 300;
    cfg.budgets = vec![5.0, 50.0];
    cfg.folds = 3;
    cfg.repeats = 2;
    cfg.strategies = vec![Strategy::Mal, Strategy::Random];
    let report_bytes = |threads: usize| -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(&cfg, &RunOptions::new(dir.path()))).expect("experiment runs");
        std::fs::read(dir.path().join("report.csv")).unwrap()
    };
    let a = report_bytes(1);
    let b = report_bytes(1);
    let c = report_bytes(3);
    ensure(a == b, "two identical runs differ")?;
    ensure(a == c, "1-thread and 3-thread runs differ")?;
    let rows = a.iter().filter(|&&ch| ch == b'\n').count() - 1;
    Ok(format!("report.csv bit-identical across 3 runs ({rows} rows, 1 and 3 threads)"))
}

// ---------------------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let pick = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut trend: Option<TrendRuns> = None;
    let mut failures = 0;
    let criteria: [(usize, &str); 12] = [
        (1, "gradient correctness"),
        (2, "contrastive loss oracle"),
        (3, "k-medoids oracle"),
        (4, "farthest-first replay"),
        (5, "MCC formula"),
        (6, "feature dimensions"),
        (7, "PCA contract"),
        (8, "t-SNE sanity"),
        (9, "MAL vs random trend"),
        (10, "dimensionality robustness"),
        (11, "CPC trainability"),
        (12, "determinism"),
    ];
    for (n, name) in criteria {
        if !pick(n) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_gradients(),
            2 => criterion_infonce(),
            3 => criterion_kmedoids(),
            4 => criterion_farthest_first(),
            5 => criterion_mcc(),
            6 => criterion_feature_dims(),
            7 => criterion_pca(),
            8 => criterion_tsne(),
            9 => criterion_trend(trend.get_or_insert_with(trend_runs)),
            10 => criterion_dim_robustness(trend.get_or_insert_with(trend_runs)),
            11 => criterion_cpc(),
            _ => criterion_determinism(),
        }))
        .unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = fmt_duration(started.elapsed());
        match result {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}) [{took}]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} {name}: FAIL ({detail}) [{took}]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
