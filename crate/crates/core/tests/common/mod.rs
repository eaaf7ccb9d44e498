//! Oracles and data generators shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cpcal::audio::{functionals_600, LogMelFrames, N_MELS};
use cpcal::cpc::{cpc_forward, CpcBatch, CpcModel};
use cpcal::harness::Dataset;
use cpcal::nn::{dot, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Materializes every softmax of the contrastive loss explicitly (unpadded batches).
pub fn infonce_brute_force(model: &CpcModel, batch: &CpcBatch) -> f64 {
    let (z, c) = cpc_forward(model, batch).unwrap();
    let (b, t_len, steps) = (batch.size(), batch.len_frames(), model.config.steps);
    let mut per_step = Vec::new();
    for k in 1..=steps {
        let w = &model.predictors[k - 1];
        let mut terms = Vec::new();
        for i in 0..b {
            for t in 0..t_len - steps {
                let pred: Vec<f64> = (0..w.cols())
                    .map(|col| (0..w.rows()).map(|r| c[i][(t, r)] * w[(r, col)]).sum())
                    .collect();
                let scores: Vec<f64> = (0..b).map(|j| dot(&pred, z[j].row(t + k))).collect();
                let denom: f64 = scores.iter().map(|s| s.exp()).sum();
                terms.push(-(scores[i].exp() / denom).ln());
            }
        }
        per_step.push(terms.iter().sum::<f64>() / terms.len() as f64);
    }
    per_step.iter().sum::<f64>() / per_step.len() as f64
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette(x: &Tensor2, labels: &[usize]) -> f64 {
    let n = x.rows();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let dist = |i: usize, j: usize| -> f64 {
        x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// `blobs` isotropic unit Gaussians in `dim` dimensions with centers `separation` apart.
pub fn gaussian_blobs(blobs: usize, per_blob: usize, dim: usize, separation: f64, seed: u64) -> (Tensor2, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let scale = separation / 2f64.sqrt();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for b in 0..blobs {
        for _ in 0..per_blob {
            let mut r: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            r[b] += scale;
            rows.push(r);
            labels.push(b);
        }
    }
    (Tensor2::from_rows(&rows).unwrap(), labels)
}

/// Log-mel-like utterances whose class is carried by frame shape under smooth motion.
///
/// Every utterance holds a spectral pattern that drifts across the 40 bands at a
/// constant per-utterance speed, wrapping around. Class 0 is a single bump,
/// class 1 is two half-height bumps half a band-cycle apart. Both put the same
/// energy in every frame and, averaged over a full sweep, the same energy in
/// every band, so the mean frame carries no class information. A frame-wise
/// nonlinear encoder can tell the shapes apart, and the drift makes the next
/// frames predictable from the past.
pub struct BumpSpec {
    pub utterances: usize,
    pub frames: usize,
    pub amplitude: f64,
    pub width: f64,
    pub noise: f64,
}

impl Default for BumpSpec {
    fn default() -> Self {
        Self { utterances: 500, frames: 120, amplitude: 2.0, width: 1.5, noise: 0.3 }
    }
}

pub fn moving_bumps(spec: &BumpSpec, seed: u64) -> (Vec<LogMelFrames>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).unwrap();
    let bands = N_MELS as f64;
    let bump = |centre: f64, band: f64| -> f64 {
        let d = (band - centre).rem_euclid(bands);
        let d = d.min(bands - d);
        (-0.5 * (d / spec.width).powi(2)).exp()
    };
    let mut out = Vec::with_capacity(spec.utterances);
    let mut classes = Vec::with_capacity(spec.utterances);
    for u in 0..spec.utterances {
        let class = u % 2;
        let start = rng.random_range(0.0..bands);
        let speed = rng.random_range(0.4..1.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut data = Vec::with_capacity(spec.frames * N_MELS);
        for t in 0..spec.frames {
            let centre = start + speed * t as f64;
            for j in 0..N_MELS {
                let b = j as f64;
                let v = match class {
                    0 => spec.amplitude * bump(centre, b),
                    _ => 0.5 * spec.amplitude * (bump(centre, b) + bump(centre + bands / 2.0, b)),
                };
                data.push(v + noise.sample(&mut rng));
            }
        }
        out.push(LogMelFrames::from_frames(Tensor2::from_vec(spec.frames, N_MELS, data).unwrap(), 16_000));
        classes.push(class);
    }
    (out, classes)
}

/// Column means of the frames: the linear summary a raw-frame space offers.
pub fn mean_frame(u: &LogMelFrames) -> Vec<f64> {
    let v = u.valid();
    v.column_sums().into_iter().map(|s| s / v.rows() as f64).collect()
}

/// Two-class dataset with named AL feature sets and functionals as classifier
/// features; class 0 maps to the positive/high quadrant, class 1 to negative/low.
pub fn two_class_dataset(
    utterances: &[LogMelFrames],
    classes: &[usize],
    feature_sets: BTreeMap<String, Tensor2>,
) -> Dataset {
    let classifier: Vec<Vec<f64>> = utterances
        .iter()
        .enumerate()
        .map(|(i, u)| functionals_600(&i.to_string(), u).unwrap().vector)
        .collect();
    let sign: Vec<i8> = classes.iter().map(|&c| if c == 0 { 1 } else { -1 }).collect();
    Dataset {
        id: "bumps".into(),
        ids: (0..utterances.len()).map(|i| format!("u{i:04}")).collect(),
        feature_sets,
        classifier: Tensor2::from_rows(&classifier).unwrap(),
        valence: sign.clone(),
        arousal: sign,
        ground_truth: Some(classes.to_vec()),
        notes: vec![],
    }
}

/// Lowest k-medoids cost over every k-subset of medoids.
pub fn exhaustive_kmedoids_cost(a: &cpcal::mal::AffinityMatrix, k: usize) -> f64 {
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
    subsets(a.len(), k)
        .iter()
        .map(|m| (0..a.len()).map(|i| m.iter().map(|&j| a.get(i, j)).fold(f64::INFINITY, f64::min)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Euclidean affinity over uniform points in the unit square.
pub fn random_planar_affinity(n: usize, rng: &mut impl Rng) -> cpcal::mal::AffinityMatrix {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    cpcal::mal::affinity(&Tensor2::from_rows(&pts).unwrap(), cpcal::mal::Metric::Euclidean).unwrap()
}
