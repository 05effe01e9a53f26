//! Dense row-major `f64` matrices, the only value type carried by the tape.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                location: "matrix construction".into(),
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    /// A single column holding `values`.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// A single row holding `values`.
    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single entry of a 1x1 matrix.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul(a: &Self, b: &Self, ta: bool, tb: bool) -> Self {
        let (m, k) = if ta {
            (a.cols, a.rows)
        } else {
            (a.rows, a.cols)
        };
        let (k2, n) = if tb {
            (b.cols, b.rows)
        } else {
            (b.rows, b.cols)
        };
        debug_assert_eq!(k, k2, "inner dimensions must agree");
        let mut out = Self::zeros(m, n);
        let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
        let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
        if m == 0 || n == 0 || k == 0 {
            return out;
        }
        // SAFETY: strides describe exactly the row-major buffers owned by `a`, `b`
        // and `out`, whose lengths are rows * cols.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa as isize,
                csa as isize,
                b.data.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        out
    }

    pub(crate) fn add_row(&self, row: &Self) -> Self {
        debug_assert_eq!(row.rows, 1);
        debug_assert_eq!(row.cols, self.cols);
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(self.cols.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        out
    }

    pub(crate) fn sum_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for chunk in self.data.chunks(self.cols.max(1)) {
            for (o, &v) in out.data.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out
    }

    pub(crate) fn sum_cols(&self) -> Self {
        let data = self
            .data
            .chunks(self.cols.max(1))
            .map(|chunk| chunk.iter().sum())
            .collect();
        Self {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    pub(crate) fn sum_all(&self) -> Self {
        Self::scalar(self.data.iter().sum())
    }

    /// Broadcasts a 1x1, 1xc or rx1 matrix to `rows x cols`.
    pub(crate) fn broadcast(&self, rows: usize, cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let rr = if self.rows == 1 { 0 } else { r };
                let cc = if self.cols == 1 { 0 } else { c };
                data.push(self.data[rr * self.cols + cc]);
            }
        }
        Self { rows, cols, data }
    }

    pub(crate) fn log_softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(self.cols.max(1)) {
            let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + chunk.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            for v in chunk.iter_mut() {
                *v -= lse;
            }
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn softmax_rows(&self) -> Self {
        self.log_softmax_rows().map(f64::exp)
    }
}
