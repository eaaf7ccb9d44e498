//! Feature matrices: the N×D table passed between pipeline stages.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{input_err, shape_err, Error, Result};
use crate::nn::Tensor2;

/// N×D utterance features plus one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub values: Tensor2,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, values: Tensor2) -> Result<Self> {
        if ids.len() != values.rows() {
            return Err(shape_err!("{} ids for {} rows", ids.len(), values.rows()));
        }
        Ok(Self { ids, values })
    }

    /// Rows named `0..N`.
    pub fn anonymous(values: Tensor2) -> Self {
        let ids = (0..values.rows()).map(|i| i.to_string()).collect();
        Self { ids, values }
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            values: self.values.select_rows(idx),
        }
    }

    pub fn with_values(&self, values: Tensor2) -> Result<Self> {
        Self::new(self.ids.clone(), values)
    }

    /// Reads `id,f0,...,f{D-1}`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let ctx = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::csv(&ctx, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(&ctx, e))?.clone();
        if headers.get(0) != Some("id") {
            return Err(input_err!("{ctx}: first column must be 'id'"));
        }
        let dim = headers.len() - 1;
        for (j, h) in headers.iter().skip(1).enumerate() {
            if h != format!("f{j}") {
                return Err(input_err!("{ctx}: column {} should be 'f{j}', found '{h}'", j + 1));
            }
        }
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut seen = HashSet::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(&ctx, e))?;
            let id = rec.get(0).unwrap_or_default().to_string();
            if !seen.insert(id.clone()) {
                return Err(input_err!("{ctx}: duplicate id '{id}'"));
            }
            for j in 0..dim {
                let field = rec.get(j + 1).unwrap_or_default();
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| input_err!("{ctx}: row {} column f{j}: '{field}' is not a number", line + 2))?;
                if !v.is_finite() {
                    return Err(input_err!("{ctx}: row {} column f{j} is not finite", line + 2));
                }
                data.push(v);
            }
            ids.push(id);
        }
        let values = Tensor2::from_vec(ids.len(), dim, data)?;
        Self::new(ids, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let ctx = path.display().to_string();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(&ctx, e))?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(|e| Error::csv(&ctx, e))?;
        for (id, row) in self.ids.iter().zip(self.values.iter_rows()) {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(id.clone());
            // shortest round-trip representation
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(|e| Error::csv(&ctx, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Column statistics produced by [`zscore_fit_apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    /// Sample (N−1) standard deviation; 0 for constant columns.
    pub std: Vec<f64>,
}

impl ZScore {
    pub fn fit(values: &Tensor2) -> Result<Self> {
        let n = values.rows();
        if n < 2 {
            return Err(input_err!("z-score needs at least 2 rows, got {n}"));
        }
        let d = values.cols();
        let mut mean = vec![0.0; d];
        for r in values.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in values.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &Tensor2) -> Result<Tensor2> {
        if values.cols() != self.mean.len() {
            return Err(shape_err!("z-score fitted on {} columns, got {}", self.mean.len(), values.cols()));
        }
        let mut out = values.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Standardizes each column to mean 0 and sample std 1; constant columns become 0.
pub fn zscore_fit_apply(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, ZScore)> {
    let z = ZScore::fit(&matrix.values)?;
    let values = z.apply(&matrix.values)?;
    Ok((matrix.with_values(values)?, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_use_sample_std() {
        let m = FeatureMatrix::anonymous(Tensor2::from_vec(2, 2, vec![0.0, 5.0, 2.0, 5.0]).unwrap());
        let (z, stats) = zscore_fit_apply(&m).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((z.values[(0, 0)] + h).abs() < 1e-12);
        assert!((z.values[(1, 0)] - h).abs() < 1e-12);
        assert_eq!(z.values[(0, 1)], 0.0);
        assert_eq!(z.values[(1, 1)], 0.0);
        assert!((stats.std[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn normalized_columns_have_unit_std() {
        let vals: Vec<f64> = (0..60).map(|i| ((i * 7919) % 101) as f64 * 0.3 - 4.0).collect();
        let m = FeatureMatrix::anonymous(Tensor2::from_vec(20, 3, vals).unwrap());
        let (z, _) = zscore_fit_apply(&m).unwrap();
        let (again, _) = zscore_fit_apply(&z).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..20).map(|i| z.values[(i, j)]).collect();
            let mean = col.iter().sum::<f64>() / 20.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
            assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        for (a, b) in again.values.data().iter().zip(z.values.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_rejected() {
        let m = FeatureMatrix::anonymous(Tensor2::zeros(1, 3));
        assert!(zscore_fit_apply(&m).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let m = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            Tensor2::from_vec(2, 3, vec![0.1, -2.0, 1e-17, 3.0, 4.5, -0.333333333333]).unwrap(),
        )
        .unwrap();
        m.write_csv(&p).unwrap();
        assert_eq!(FeatureMatrix::read_csv(&p).unwrap(), m);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,f0,f1,f2\n"));
    }

    #[test]
    fn csv_duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "id,f0\na,1\na,2\n").unwrap();
        let err = FeatureMatrix::read_csv(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate id 'a'"), "{err}");
    }
}
