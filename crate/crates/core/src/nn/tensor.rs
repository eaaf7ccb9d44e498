use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "{} values cannot fill a {}x{} tensor",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_err!("row {} has {} columns, expected {}", i, r.len(), cols));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = 1.0;
        }
        t
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width tensors yield empty rows explicitly
        let cols = self.cols.max(1);
        let n = self.rows;
        let empty: &[f64] = &[];
        (0..n).map(move |i| {
            if self.cols == 0 {
                empty
            } else {
                &self.data[i * cols..(i + 1) * cols]
            }
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.rows {
            return Err(shape_err!(
                "matmul {}x{} by {}x{}",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Tensor2::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += aik * bj;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`
    pub fn matmul_tn(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.rows != rhs.rows {
            return Err(shape_err!(
                "matmul_tn {}x{}ᵀ by {}x{}",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Tensor2::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = rhs.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += ai * bj;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`
    pub fn matmul_nt(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.cols {
            return Err(shape_err!(
                "matmul_nt {}x{} by {}x{}ᵀ",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Tensor2::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (a, b) in s.iter_mut().zip(r) {
                *a += b;
            }
        }
        s
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl std::ops::Index<(usize, usize)> for Tensor2 {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Tensor2 {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
