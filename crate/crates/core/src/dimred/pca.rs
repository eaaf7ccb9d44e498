use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Error, Result};
use crate::nn::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// D×d, orthonormal columns.
    pub components: Tensor2,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path.display().to_string(), e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Error::parse_json(&text, &path.display().to_string())
    }
}

/// Fits the top-`d` principal axes through an SVD of the centered data.
pub fn pca_fit(values: &Tensor2, d: usize) -> Result<PcaModel> {
    let (n, dim) = values.shape();
    if d == 0 || d > dim || d >= n {
        return Err(input_err!("cannot fit {d} components to {n}×{dim} data"));
    }
    if !values.is_finite() {
        return Err(input_err!("PCA input contains non-finite values"));
    }
    let mean: Vec<f64> = values.column_sums().into_iter().map(|s| s / n as f64).collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| values[(i, j)] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not produce right singular vectors".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let mut components = Tensor2::zeros(dim, d);
    let mut explained_variance = Vec::with_capacity(d);
    for (c, &k) in order.iter().take(d).enumerate() {
        let row = v_t.row(k);
        // sign convention: largest-magnitude entry positive
        let mut pivot = 0;
        for j in 1..dim {
            if row[j].abs() > row[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            components[(j, c)] = sign * row[j];
        }
        let s = svd.singular_values[k];
        explained_variance.push(s * s / (n - 1) as f64);
    }
    Ok(PcaModel { mean, components, explained_variance })
}

/// `(x − mean)·components`.
pub fn pca_transform(model: &PcaModel, values: &Tensor2) -> Result<Tensor2> {
    if values.cols() != model.input_dim() {
        return Err(shape_err!(
            "PCA fitted on {} columns, got {}",
            model.input_dim(),
            values.cols()
        ));
    }
    let mut centered = values.clone();
    for r in 0..centered.rows() {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&model.mean) {
            *v -= m;
        }
    }
    centered.matmul(&model.components)
}

/// Maps reduced coordinates back to the input space.
pub fn pca_inverse(model: &PcaModel, reduced: &Tensor2) -> Result<Tensor2> {
    if reduced.cols() != model.output_dim() {
        return Err(shape_err!(
            "PCA has {} components, got {} columns",
            model.output_dim(),
            reduced.cols()
        ));
    }
    let mut out = reduced.matmul_nt(&model.components)?;
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(&model.mean) {
            *v += m;
        }
    }
    Ok(out)
}
