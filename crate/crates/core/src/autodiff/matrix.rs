//! Small row-major dense matrix used for tape values.

use std::fmt;

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match shape {rows}x{cols}",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    pub fn column(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self::from_vec(rows, 1, data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::from_vec(m, n, out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.data[r * self.cols + c]);
            }
        }
        Self::from_vec(self.cols, self.rows, out)
    }

    /// Column sums, `rows x cols -> 1 x cols`.
    pub fn sum_rows(&self) -> Self {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Self::from_vec(1, self.cols, out)
    }

    /// Row sums, `rows x cols -> rows x 1`.
    pub fn sum_cols(&self) -> Self {
        let out = (0..self.rows).map(|r| self.row(r).iter().sum()).collect();
        Self::from_vec(self.rows, 1, out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Repeats a `1 x cols` row `rows` times.
    pub fn repeat_rows(&self, rows: usize) -> Self {
        debug_assert_eq!(self.rows, 1);
        let mut out = Vec::with_capacity(rows * self.cols);
        for _ in 0..rows {
            out.extend_from_slice(&self.data);
        }
        Self::from_vec(rows, self.cols, out)
    }

    /// Repeats a `rows x 1` column `cols` times.
    pub fn repeat_cols(&self, cols: usize) -> Self {
        debug_assert_eq!(self.cols, 1);
        let mut out = Vec::with_capacity(self.rows * cols);
        for &v in &self.data {
            out.extend(std::iter::repeat_n(v, cols));
        }
        Self::from_vec(self.rows, cols, out)
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax_rows(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            let row = self.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            let mut total = 0.0;
            for &v in row {
                let e = (v - max).exp();
                total += e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v /= total;
            }
        }
        Self::from_vec(self.rows, self.cols, out)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.iter()).finish()
    }
}
