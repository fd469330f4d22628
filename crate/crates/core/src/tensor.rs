// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major `f64` matrices.
//!
//! Everything in the crate that holds numbers in bulk (activation batches,
//! noise, parameters, covariances) is a [`Matrix`]. Row vectors are `1 x n`
//! matrices. Products go through `matrixmultiply`'s packed GEMM kernels with
//! transposition expressed through strides, so `a · bᵀ` never materializes
//! the transpose.

use crate::error::{GlpError, Result};

#[derive(Clone, Debug, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GlpError::shape(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
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
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; zero-width matrices yield empty rows.
        let cols = self.cols.max(1);
        let n = self.rows;
        self.data
            .chunks_exact(cols)
            .take(n)
            .chain(std::iter::repeat_n(&[][..], if self.cols == 0 { n } else { 0 }))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn ensure_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(GlpError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t: inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
            &mut out.data,
            0.0,
        );
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul: inner dimensions");
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            (&self.data, 1, self.cols as isize),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        out
    }

    /// `self += aᵀ · b`
    pub fn add_t_matmul(&mut self, a: &Matrix, b: &Matrix) {
        assert_eq!(a.rows, b.rows, "add_t_matmul: inner dimensions");
        assert_eq!(self.shape(), (a.cols, b.cols), "add_t_matmul: output shape");
        gemm(
            a.cols,
            a.rows,
            b.cols,
            (&a.data, 1, a.cols as isize),
            (&b.data, b.cols as isize, 1),
            &mut self.data,
            1.0,
        );
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "zip_map: shapes");
        Matrix {
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

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy: shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(&self, row: &[f64]) -> Matrix {
        assert_eq!(row.len(), self.cols, "add_row: width");
        let mut out = self.clone();
        for r in out.data.chunks_exact_mut(self.cols.max(1)) {
            for (a, b) in r.iter_mut().zip(row) {
                *a += b;
            }
        }
        out
    }

    /// Multiplies every row elementwise by a `1 x cols` row vector.
    pub fn mul_row(&self, row: &[f64]) -> Matrix {
        assert_eq!(row.len(), self.cols, "mul_row: width");
        let mut out = self.clone();
        for r in out.data.chunks_exact_mut(self.cols.max(1)) {
            for (a, b) in r.iter_mut().zip(row) {
                *a *= b;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Column sums as a row vector.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn col_means(&self) -> Vec<f64> {
        let n = self.rows as f64;
        self.col_sums().into_iter().map(|s| s / n).collect()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, indices.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (d, &c) in dst.iter_mut().zip(indices) {
                *d = src[c];
            }
        }
        out
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(GlpError::shape(
                    "vstack",
                    format!("{} vs {} columns", p.cols, cols),
                ));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn hstack(parts: &[Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(GlpError::shape("hstack", "row counts differ"));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let dst = out.row_mut(r);
            let mut off = 0;
            for p in parts {
                dst[off..off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        Ok(out)
    }

    /// Largest absolute difference between `self` and its transpose.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&self) -> Matrix {
        let t = self.transpose();
        self.zip_map(&t, |a, b| 0.5 * (a + b))
    }
}

type Operand<'a> = (&'a [f64], isize, isize);

fn gemm(m: usize, k: usize, n: usize, a: Operand, b: Operand, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: the callers size `a`, `b` and `c` so that every index reachable
    // through the given (rows, cols, strides) lies inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn sample(rows: usize, cols: usize, salt: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + salt) * 0.37).sin())
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn products_match_naive_loops() {
        let a = sample(5, 7, 0.1);
        let b = sample(7, 3, 0.7);
        let c = sample(4, 7, 1.3);
        let expected = naive(&a, &b);
        assert!(a.matmul(&b).sub(&expected).max_abs() < 1e-12);
        assert!(a.matmul_t(&c).sub(&naive(&a, &c.transpose())).max_abs() < 1e-12);
        let d = sample(5, 2, 2.0);
        assert!(a.t_matmul(&d).sub(&naive(&a.transpose(), &d)).max_abs() < 1e-12);
        let mut acc = Matrix::filled(7, 2, 1.0);
        acc.add_t_matmul(&a, &d);
        let want = naive(&a.transpose(), &d).map(|v| v + 1.0);
        assert!(acc.sub(&want).max_abs() < 1e-12);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn stacking_and_selection() {
        let a = sample(2, 3, 0.0);
        let b = sample(1, 3, 5.0);
        let v = Matrix::vstack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(v.shape(), (3, 3));
        assert_eq!(v.row(2), b.row(0));
        let h = Matrix::hstack(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(h.shape(), (2, 6));
        assert_eq!(&h.row(1)[3..], a.row(1));
        assert_eq!(v.select_rows(&[2, 0]).row(1), a.row(0));
        assert_eq!(a.select_cols(&[2]).col(0), a.col(2));
        assert_eq!(a.iter_rows().count(), 2);
        assert_eq!(Matrix::zeros(3, 0).iter_rows().count(), 3);
    }
}
