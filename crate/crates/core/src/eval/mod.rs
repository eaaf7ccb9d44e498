//! Downstream scoring: RBF SVM, MCC, cross-validation folds, grid search.

mod svm;

pub use svm::{rbf, svm_predict, svm_train, SvmModel, KKT_TOLERANCE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Result};
use crate::nn::{derive_seed, Tensor2};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    /// Counts with +1 as the positive class.
    pub fn from_predictions(truth: &[i8], pred: &[i8]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(shape_err!("{} truths vs {} predictions", truth.len(), pred.len()));
        }
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t > 0, p > 0) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Swaps the roles of the two classes.
    pub fn swapped(&self) -> Self {
        Self { tp: self.tn, tn: self.tp, fp: self.fn_, fn_: self.fp }
    }
}

/// Matthews correlation coefficient. A zero factor in the denominator gives 0.
pub fn mcc(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(input_err!("mcc of an empty confusion matrix"));
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(((tp * tn - fp * fn_) / den.sqrt()).clamp(-1.0, 1.0))
}

pub fn mcc_from_predictions(truth: &[i8], pred: &[i8]) -> Result<f64> {
    mcc(&ConfusionCounts::from_predictions(truth, pred)?)
}

/// Fold id per sample: a seeded permutation cut into near-equal parts,
/// the first `n % folds` parts one larger.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds == 0 || n < folds {
        return Err(input_err!("cannot split {n} samples into {folds} folds"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = vec![0; n];
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &i in &perm[pos..pos + size] {
            out[i] = f;
        }
        pos += size;
    }
    Ok(out)
}

/// Training and test indices for one fold.
pub fn fold_split(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..assignment.len()).partition(|&i| assignment[i] == fold);
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    5
}

impl GridSpec {
    pub fn new(mut c_values: Vec<f64>, mut gamma_values: Vec<f64>) -> Result<Self> {
        for v in c_values.iter().chain(&gamma_values) {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(input_err!("grid values must be positive, got {v}"));
            }
        }
        if c_values.is_empty() || gamma_values.is_empty() {
            return Err(input_err!("grid needs at least one C and one gamma"));
        }
        c_values.sort_by(f64::total_cmp);
        gamma_values.sort_by(f64::total_cmp);
        Ok(Self { c_values, gamma_values, folds: 5 })
    }

    /// C ∈ {0.1, 1, 10, 100}; gamma one decade either side of `1/(D·var)`.
    pub fn default_for(features: &Tensor2) -> Result<Self> {
        let g0 = scale_gamma(features);
        Self::new(vec![0.1, 1.0, 10.0, 100.0], vec![g0 / 10.0, g0, g0 * 10.0])
    }

    pub fn midpoint(&self) -> (f64, f64) {
        (
            self.c_values[(self.c_values.len() - 1) / 2],
            self.gamma_values[(self.gamma_values.len() - 1) / 2],
        )
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.c_values.clone(), self.gamma_values.clone())?;
        if self.folds < 2 {
            return Err(input_err!("grid folds must be at least 2"));
        }
        Ok(())
    }
}

/// `1/(D·var)` over all entries; falls back to `1/D` for constant data.
pub fn scale_gamma(features: &Tensor2) -> f64 {
    let d = features.cols().max(1) as f64;
    let data = features.data();
    if data.is_empty() {
        return 1.0 / d;
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (d * var)
    } else {
        1.0 / d
    }
}

pub const GRID_MIN_SAMPLES: usize = 10;

/// Mean k-fold MCC for one (C, gamma) cell.
pub fn cv_mcc(features: &Tensor2, labels: &[i8], c: f64, gamma: f64, folds: &[usize], k: usize) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..k {
        let (train, test) = fold_split(folds, f);
        let ytr: Vec<i8> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<i8> = test.iter().map(|&i| labels[i]).collect();
        let model = svm_train(&features.select_rows(&train), &ytr, c, gamma)?;
        let pred = svm_predict(&model, &features.select_rows(&test))?;
        total += mcc_from_predictions(&yte, &pred)?;
    }
    Ok(total / k as f64)
}

/// Grid search maximizing mean cross-validated MCC.
///
/// Fewer than ten samples or a single class returns the grid midpoint.
/// Ties go to the smaller C, then the smaller gamma.
pub fn grid_search(features: &Tensor2, labels: &[i8], grid: &GridSpec, seed: u64) -> Result<(f64, f64)> {
    if features.rows() != labels.len() {
        return Err(shape_err!("{} samples with {} labels", features.rows(), labels.len()));
    }
    let single_class = labels.iter().all(|&y| y == labels[0]);
    if labels.len() < GRID_MIN_SAMPLES.max(grid.folds) || single_class {
        return Ok(grid.midpoint());
    }
    let folds = make_folds(labels.len(), grid.folds, derive_seed(seed, 0x6772_6964))?;
    let mut cs = grid.c_values.clone();
    let mut gs = grid.gamma_values.clone();
    cs.sort_by(f64::total_cmp);
    gs.sort_by(f64::total_cmp);
    let cells: Vec<(f64, f64)> = cs.iter().flat_map(|&c| gs.iter().map(move |&g| (c, g))).collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(c, g)| cv_mcc(features, labels, c, g, &folds, grid.folds))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(cells[best])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedT {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value; 1 when all differences are zero.
    pub p_value: f64,
}

/// Paired t-test of `a − b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedT> {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    if a.len() != b.len() {
        return Err(input_err!("paired samples differ in length ({} vs {})", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(input_err!("paired t needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let (t, p_value) = if se == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| input_err!("{e}"))?;
        (t, 2.0 * dist.sf(t.abs()))
    };
    Ok(PairedT { n, mean_diff: mean, t, df, p_value })
}

/// Mean and standard error of the mean (sample std / √n; 0 for one value).
pub fn mean_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}
