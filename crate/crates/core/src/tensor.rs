//! Dense row-major 2-D storage used by every layer.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: S) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Rows `start..start + count` as a new matrix.
    pub fn slice_rows(&self, start: usize, count: usize) -> Self {
        let begin = start * self.cols;
        Self::from_vec(count, self.cols, self.data[begin..begin + count * self.cols].to_vec())
    }

    pub fn slice_cols(&self, start: usize, count: usize) -> Self {
        let mut out = Vec::with_capacity(self.rows * count);
        for r in 0..self.rows {
            out.extend_from_slice(&self.row(r)[start..start + count]);
        }
        Self::from_vec(self.rows, count, out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul(a: &Self, trans_a: bool, b: &Self, trans_b: bool) -> Self {
        let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
        assert_eq!(k, kb, "matmul inner dimension mismatch: {:?} x {:?}", a.shape(), b.shape());
        let mut out = Self::zeros(m, n);
        Self::gemm_into(a, trans_a, b, trans_b, S::zero(), &mut out);
        out
    }

    /// `out = op(a) * op(b) + beta * out`.
    pub fn gemm_into(a: &Self, trans_a: bool, b: &Self, trans_b: bool, beta: S, out: &mut Self) {
        let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
        assert_eq!(k, kb, "gemm inner dimension mismatch");
        assert_eq!(out.shape(), (m, n), "gemm output shape mismatch");
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            out.scale_in_place(beta);
            return;
        }
        let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
        let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
        // SAFETY: shapes were checked above and all buffers are owned and contiguous.
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::cast(v.to_f64_lossy())).collect(),
        }
    }
}
