//! Dense 2-D matrices of `f64` in row-major order.
//!
//! Everything in the pipeline — point coordinates, feature maps, transport
//! plans, parameter matrices — is a [`Tensor2`]. The type is deliberately
//! plain: a shape and a flat buffer, plus the handful of kernels the
//! differentiation engine needs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// A `rows x cols` matrix of `f64`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Construction error: buffer length does not match the requested shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError {
    pub rows: usize,
    pub cols: usize,
    pub len: usize,
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "buffer of length {} cannot form a {}x{} matrix",
            self.len, self.rows, self.cols
        )
    }
}

impl core::error::Error for ShapeError {}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// A 1xN row vector.
    pub fn row_vec(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    /// An Nx1 column vector.
    pub fn col_vec(data: Vec<f64>) -> Self {
        Self { rows: data.len(), cols: 1, data }
    }

    /// A 1x1 matrix.
    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Extract the value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
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

    /// Reinterpret the buffer with a new shape; element count must match.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Self, ShapeError> {
        Self::from_vec(rows, cols, self.data.clone())
    }

    /// Copy of rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        debug_assert!(start + len <= self.rows);
        Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    /// Largest entry and its (row, col) position, lowest index winning ties.
    pub fn max_entry(&self) -> (f64, usize, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut pos = 0;
        for (k, &v) in self.data.iter().enumerate() {
            if v > best {
                best = v;
                pos = k;
            }
        }
        (best, pos / self.cols, pos % self.cols)
    }

    /// Column-wise maxima as a 1xC row, plus the argmax row index per column
    /// (lowest row wins ties).
    pub fn col_max(&self) -> (Tensor2, Vec<usize>) {
        let mut vals = vec![f64::NEG_INFINITY; self.cols];
        let mut arg = vec![0usize; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for (j, &v) in row.iter().enumerate() {
                if v > vals[j] {
                    vals[j] = v;
                    arg[j] = i;
                }
            }
        }
        (Tensor2::row_vec(vals), arg)
    }

    /// `self += other * scale`, shapes must match.
    pub fn add_scaled_assign(&mut self, other: &Tensor2, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * scale;
        }
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Tensor2::zeros(self.rows, other.cols);
        matmul_acc(&mut out, self, other);
        out
    }
}

/// `dst += a * b` with `a: m x k`, `b: k x n`, `dst: m x n`.
///
/// i-k-j loop order keeps the inner loop a contiguous axpy, which the
/// compiler vectorizes.
pub fn matmul_acc(dst: &mut Tensor2, a: &Tensor2, b: &Tensor2) {
    let (m, k) = a.shape();
    let n = b.cols;
    debug_assert_eq!(k, b.rows);
    debug_assert_eq!(dst.shape(), (m, n));
    for i in 0..m {
        let arow = a.row(i);
        let drow = dst.row_mut(i);
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (d, &bv) in drow.iter_mut().zip(brow.iter()) {
                *d += aik * bv;
            }
        }
    }
}

/// `dst += g * b^T` with `g: m x n`, `b: k x n`, `dst: m x k`.
///
/// Inner loop is a dot product of two contiguous rows.
pub fn matmul_nt_acc(dst: &mut Tensor2, g: &Tensor2, b: &Tensor2) {
    let (m, n) = g.shape();
    let k = b.rows;
    debug_assert_eq!(n, b.cols);
    debug_assert_eq!(dst.shape(), (m, k));
    for i in 0..m {
        let grow = g.row(i);
        let drow = dst.row_mut(i);
        for (kk, d) in drow.iter_mut().enumerate() {
            let brow = b.row(kk);
            let mut acc = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow.iter()) {
                acc += gv * bv;
            }
            *d += acc;
        }
    }
}

/// `dst += a^T * g` with `a: m x k`, `g: m x n`, `dst: k x n`.
pub fn matmul_tn_acc(dst: &mut Tensor2, a: &Tensor2, g: &Tensor2) {
    let (m, k) = a.shape();
    let n = g.cols;
    debug_assert_eq!(m, g.rows);
    debug_assert_eq!(dst.shape(), (k, n));
    for i in 0..m {
        let arow = a.row(i);
        let grow = &g.data[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let drow = dst.row_mut(kk);
            for (d, &gv) in drow.iter_mut().zip(grow.iter()) {
                *d += aik * gv;
            }
        }
    }
}
