//! Medoid-based active learning.
//!
//! Pairwise distances go into an affinity matrix, farthest-first traversal
//! picks `k` initial medoids, alternating k-medoids refines them, and the
//! medoids are queried for labels in descending cluster-size order.
//!
//! All ties are broken towards the lowest index.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::nn::{dot, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    /// Euclidean for 2-D features, cosine otherwise.
    pub fn auto(dim: usize) -> Self {
        if dim == 2 {
            Metric::Euclidean
        } else {
            Metric::Cosine
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

/// Symmetric N×N distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    data: Vec<f64>,
    metric: Metric,
}

impl AffinityMatrix {
    /// Wraps precomputed distances after validating symmetry, sign and diagonal.
    pub fn from_distances(n: usize, data: Vec<f64>, metric: Metric) -> Result<Self> {
        if data.len() != n * n {
            return Err(input_err!("{} distances for a {n}x{n} matrix", data.len()));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(input_err!("diagonal entry {i} is not zero"));
            }
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !(a >= 0.0) || (a - b).abs() > 1e-12 {
                    return Err(input_err!("distances ({i},{j}) are negative or asymmetric"));
                }
            }
        }
        Ok(Self { n, data, metric })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Binary cache: `b"AFFN"`, u32 version, u64 N, u8 metric (0 euclidean,
    /// 1 cosine), then N² little-endian f64.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(17 + self.data.len() * 8);
        out.extend_from_slice(b"AFFN");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.push(match self.metric {
            Metric::Euclidean => 0,
            Metric::Cosine => 1,
        });
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 17 || &bytes[..4] != b"AFFN" || bytes[4..8] != 1u32.to_le_bytes() {
            return Err(input_err!("{}: not an affinity cache", path.display()));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let metric = match bytes[16] {
            0 => Metric::Euclidean,
            1 => Metric::Cosine,
            m => return Err(input_err!("{}: unknown metric tag {m}", path.display())),
        };
        let body = &bytes[17..];
        if body.len() != n * n * 8 {
            return Err(input_err!("{}: expected {} distances", path.display(), n * n));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { n, data, metric })
    }
}

/// Pairwise distances between the rows of `values`.
pub fn affinity(values: &Tensor2, metric: Metric) -> Result<AffinityMatrix> {
    let n = values.rows();
    if n < 2 {
        return Err(input_err!("affinity needs at least 2 samples, got {n}"));
    }
    let norms: Vec<f64> = values.iter_rows().map(|r| dot(r, r).sqrt()).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&v| v == 0.0) {
            return Err(input_err!("row {i} has zero norm; cosine distance is undefined"));
        }
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = values.row(i);
            (i + 1..n)
                .map(|j| {
                    let b = values.row(j);
                    match metric {
                        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
                        Metric::Cosine => (1.0 - dot(a, b) / (norms[i] * norms[j])).clamp(0.0, 2.0),
                    }
                })
                .collect()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, d) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(AffinityMatrix { n, data, metric })
}

/// Farthest-first traversal from a given first index.
pub fn farthest_first_from(a: &AffinityMatrix, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = a.len();
    if k == 0 || k > n {
        return Err(input_err!("cannot pick {k} of {n} samples"));
    }
    if start >= n {
        return Err(input_err!("start index {start} out of range"));
    }
    let mut picked = vec![start];
    let mut min_dist: Vec<f64> = a.row(start).to_vec();
    min_dist[start] = f64::NEG_INFINITY;
    while picked.len() < k {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        picked.push(best);
        min_dist[best] = f64::NEG_INFINITY;
        for (m, &d) in min_dist.iter_mut().zip(a.row(best)) {
            if *m > d {
                *m = d;
            }
        }
    }
    Ok(picked)
}

/// Farthest-first traversal with a uniformly random (seeded) first index.
pub fn farthest_first(a: &AffinityMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    if a.is_empty() {
        return Err(input_err!("empty affinity matrix"));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..a.len());
    farthest_first_from(a, k, start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    /// Medoid sample index per cluster id.
    pub medoids: Vec<usize>,
    /// Cluster id per sample.
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after every assignment step.
    pub cost_history: Vec<f64>,
    pub metric: Metric,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }
}

pub const MAX_KMEDOIDS_ITERATIONS: usize = 100;

fn assign(a: &AffinityMatrix, medoids: &[usize]) -> (Vec<usize>, f64) {
    let n = a.len();
    // ties go to the medoid with the lowest sample index
    let mut order: Vec<usize> = (0..medoids.len()).collect();
    order.sort_by_key(|&c| medoids[c]);
    let mut is_medoid = vec![usize::MAX; n];
    for (c, &m) in medoids.iter().enumerate() {
        if is_medoid[m] == usize::MAX {
            is_medoid[m] = c;
        }
    }
    let mut assignment = vec![0; n];
    let mut cost = 0.0;
    for i in 0..n {
        if is_medoid[i] != usize::MAX {
            assignment[i] = is_medoid[i];
            continue;
        }
        let row = a.row(i);
        let mut best = order[0];
        let mut best_d = row[medoids[best]];
        for &c in &order[1..] {
            let d = row[medoids[c]];
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        assignment[i] = best;
        cost += best_d;
    }
    (assignment, cost)
}

/// Nearest medoid (cluster id), its distance, and the second-nearest distance.
fn nearest_two(a: &AffinityMatrix, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut order: Vec<usize> = (0..medoids.len()).collect();
    order.sort_by_key(|&c| medoids[c]);
    let mut near = vec![0; n];
    let mut dn = vec![f64::INFINITY; n];
    let mut ds = vec![f64::INFINITY; n];
    for o in 0..n {
        let row = a.row(o);
        for &c in &order {
            let d = row[medoids[c]];
            if d < dn[o] {
                ds[o] = dn[o];
                dn[o] = d;
                near[o] = c;
            } else if d < ds[o] {
                ds[o] = d;
            }
        }
    }
    (near, dn, ds)
}

/// Eager medoid/non-medoid swaps until no swap lowers the total cost.
/// Returns the number of passes over the candidates.
fn swap_refine(a: &AffinityMatrix, medoids: &mut [usize], cost_history: &mut Vec<f64>) -> usize {
    let n = a.len();
    let k = medoids.len();
    let (mut near, mut dn, mut ds) = nearest_two(a, medoids);
    let mut is_medoid = vec![false; n];
    for &m in medoids.iter() {
        is_medoid[m] = true;
    }
    let mut passes = 0;
    while passes < MAX_KMEDOIDS_ITERATIONS {
        passes += 1;
        let mut improved = false;
        for cand in 0..n {
            if is_medoid[cand] {
                continue;
            }
            // cost change of replacing each medoid by `cand`
            let mut delta = vec![0.0; k];
            for o in 0..n {
                delta[near[o]] += ds[o] - dn[o];
            }
            let mut shared = 0.0;
            let row = a.row(cand);
            for o in 0..n {
                let d = row[o];
                if d < dn[o] {
                    shared += d - dn[o];
                    delta[near[o]] += dn[o] - ds[o];
                } else if d < ds[o] {
                    delta[near[o]] += d - ds[o];
                }
            }
            let mut best = 0;
            for c in 1..k {
                if delta[c] < delta[best] {
                    best = c;
                }
            }
            let total: f64 = dn.iter().sum();
            if delta[best] + shared < -1e-12 * (1.0 + total) {
                is_medoid[medoids[best]] = false;
                is_medoid[cand] = true;
                medoids[best] = cand;
                (near, dn, ds) = nearest_two(a, medoids);
                cost_history.push(dn.iter().sum());
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    passes
}

/// Alternating k-medoids from the given initial medoids, followed by
/// swap refinement when `k > 1`.
pub fn k_medoids_from(a: &AffinityMatrix, initial: &[usize]) -> Result<ClusteringResult> {
    let n = a.len();
    let k = initial.len();
    if k == 0 || k > n {
        return Err(input_err!("cannot form {k} clusters from {n} samples"));
    }
    if initial.iter().any(|&m| m >= n) || initial.iter().collect::<HashSet<_>>().len() != k {
        return Err(input_err!("initial medoids must be {k} distinct in-range indices"));
    }
    let mut medoids = initial.to_vec();
    let (mut assignment, mut cost) = assign(a, &medoids);
    let mut cost_history = vec![cost];
    let mut iterations = 0;
    while iterations < MAX_KMEDOIDS_ITERATIONS {
        iterations += 1;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        for (c, m) in members.iter().enumerate() {
            debug_assert!(!m.is_empty(), "cluster {c} lost its medoid");
            let mut best = medoids[c];
            let mut best_sum: f64 = m.iter().map(|&j| a.get(best, j)).sum();
            for &cand in m {
                let row = a.row(cand);
                let s: f64 = m.iter().map(|&j| row[j]).sum();
                if s < best_sum || (s == best_sum && cand < best) {
                    best = cand;
                    best_sum = s;
                }
            }
            medoids[c] = best;
        }
        let (next, next_cost) = assign(a, &medoids);
        cost_history.push(next_cost);
        let stable = next == assignment;
        assignment = next;
        cost = next_cost;
        if stable {
            break;
        }
    }
    if k > 1 {
        iterations += swap_refine(a, &mut medoids, &mut cost_history);
        (assignment, cost) = assign(a, &medoids);
    }
    let mut sizes = vec![0; k];
    for &c in &assignment {
        sizes[c] += 1;
    }
    Ok(ClusteringResult {
        medoids,
        assignment,
        sizes,
        cost,
        iterations,
        cost_history,
        metric: a.metric(),
    })
}

/// Farthest-first seeding followed by k-medoids (alternation, then swaps).
pub fn k_medoids(a: &AffinityMatrix, k: usize, seed: u64) -> Result<ClusteringResult> {
    if k == 0 || k > a.len() {
        return Err(input_err!("cannot form {k} clusters from {} samples", a.len()));
    }
    let init = farthest_first(a, k, seed)?;
    k_medoids_from(a, &init)
}

/// One cluster per three samples, rounded to nearest, at least 1.
pub fn default_k(n: usize) -> usize {
    ((n as f64 / 3.0).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    MedoidLabels,
    ClusterLabels,
}

impl LabelPolicy {
    pub fn name(self) -> &'static str {
        match self {
            LabelPolicy::MedoidLabels => "medoid_labels",
            LabelPolicy::ClusterLabels => "cluster_labels",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    /// Samples to annotate, in query order.
    pub indices: Vec<usize>,
    pub policy: LabelPolicy,
    pub budget: usize,
    /// How many leading entries of `indices` are medoids.
    pub medoids_queried: usize,
}

/// Medoids by descending cluster size (ties: lower cluster id), then, if the
/// budget exceeds `k`, seeded uniform draws among the remaining samples.
pub fn query_plan(clusters: &ClusteringResult, budget: usize, policy: LabelPolicy, seed: u64) -> QueryPlan {
    let n = clusters.assignment.len();
    let mut order: Vec<usize> = (0..clusters.k()).collect();
    order.sort_by(|&a, &b| clusters.sizes[b].cmp(&clusters.sizes[a]).then(a.cmp(&b)));
    let take = budget.min(clusters.k());
    let mut indices: Vec<usize> = order[..take].iter().map(|&c| clusters.medoids[c]).collect();
    let want = budget.min(n);
    if want > indices.len() {
        let taken: HashSet<usize> = indices.iter().copied().collect();
        let rest: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extra = sample(&mut rng, rest.len(), want - indices.len());
        indices.extend(extra.into_iter().map(|j| rest[j]));
    }
    QueryPlan {
        indices,
        policy,
        budget,
        medoids_queried: take,
    }
}

/// Seeded uniform sample of `min(budget, n)` distinct indices.
pub fn random_plan(n: usize, budget: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, n, budget.min(n)).into_vec()
}

/// Resolves the plan against an oracle. Returns `(sample, label)` pairs in
/// ascending sample order.
///
/// Under `ClusterLabels` each queried medoid's label is copied to its whole
/// cluster; extra (non-medoid) queries always keep their own label.
pub fn assign_labels<L, F>(plan: &QueryPlan, clusters: &ClusteringResult, mut oracle: F) -> Result<Vec<(usize, L)>>
where
    L: Copy,
    F: FnMut(usize) -> Option<L>,
{
    let n = clusters.assignment.len();
    let mut labels: Vec<Option<L>> = vec![None; n];
    let mut ask = |i: usize| oracle(i).ok_or_else(|| input_err!("oracle has no label for sample {i}"));
    for (pos, &i) in plan.indices.iter().enumerate() {
        let label = ask(i)?;
        if plan.policy == LabelPolicy::ClusterLabels && pos < plan.medoids_queried {
            let cluster = clusters.assignment[i];
            for (j, slot) in labels.iter_mut().enumerate() {
                // earlier individual answers are never overwritten
                if clusters.assignment[j] == cluster && slot.is_none() {
                    *slot = Some(label);
                }
            }
        }
        labels[i] = Some(label);
    }
    Ok(labels
        .into_iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|l| (i, l)))
        .collect())
}

/// Mean over clusters of the majority-class fraction, weighted by cluster size.
pub fn cluster_purity<T: Eq + std::hash::Hash + Copy>(assignment: &[usize], truth: &[T]) -> f64 {
    use std::collections::HashMap;
    let mut counts: HashMap<usize, HashMap<T, usize>> = HashMap::new();
    for (&c, &t) in assignment.iter().zip(truth) {
        *counts.entry(c).or_default().entry(t).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / assignment.len().max(1) as f64
}
