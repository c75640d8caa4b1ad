use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::{Error, Result};

/// Row-major dense matrix of `f64`.
///
/// Per-edge quantities are stored as `|edges| x 1` (or `|edges| x c`)
/// matrices aligned with [`Graph::edges`](crate::Graph::edges).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    ///
    /// Panics on ragged input; intended for literals and tests.
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

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry (the max-norm used by every tolerance check).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Induced infinity norm: largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
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
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "sub")?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "add")?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub(crate) fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub(crate) fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Matrix product `self * other`.
    ///
    /// Zero entries of `self` are skipped, which makes products with sparse
    /// bag-of-words feature matrices cheap.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        matmul_acc(self, other, &mut out);
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        matmul_t_acc(self, other, &mut out);
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "t_matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.cols, other.cols);
        t_matmul_acc(self, other, &mut out);
        Ok(out)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Four consecutive rows of `data` (row length `n`) starting at row `i`.
fn rows4(data: &mut [f64], i: usize, n: usize) -> [&mut [f64]; 4] {
    let (r0, rest) = data[i * n..(i + 4) * n].split_at_mut(n);
    let (r1, rest) = rest.split_at_mut(n);
    let (r2, r3) = rest.split_at_mut(n);
    [r0, r1, r2, r3]
}

/// `out[j] += x0 b0[j] + x1 b1[j] + ...`, accumulated in that order.
#[inline]
fn axpy4(out: &mut [f64], x: [f64; 4], b: [&[f64]; 4]) {
    let n = out.len();
    let (b0, b1, b2, b3) = (&b[0][..n], &b[1][..n], &b[2][..n], &b[3][..n]);
    for j in 0..n {
        out[j] = (((out[j] + x[0] * b0[j]) + x[1] * b1[j]) + x[2] * b2[j]) + x[3] * b3[j];
    }
}

#[inline]
fn axpy(out: &mut [f64], x: f64, b: &[f64]) {
    for (o, &bj) in out.iter_mut().zip(b) {
        *o += x * bj;
    }
}

/// `out += a * b`
pub(crate) fn matmul_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let (m, inner, n) = (a.rows, a.cols, b.cols);
    let mut i = 0;
    while i + 4 <= m {
        let [o0, o1, o2, o3] = rows4(&mut out.data, i, n);
        let a_at = |r: usize, k: usize| a.data[(i + r) * inner + k];
        for k in 0..inner {
            let x = [a_at(0, k), a_at(1, k), a_at(2, k), a_at(3, k)];
            if x == [0.0; 4] {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            let (o0, o1, o2, o3) = (&mut o0[..n], &mut o1[..n], &mut o2[..n], &mut o3[..n]);
            for j in 0..n {
                let bj = brow[j];
                o0[j] += x[0] * bj;
                o1[j] += x[1] * bj;
                o2[j] += x[2] * bj;
                o3[j] += x[3] * bj;
            }
        }
        i += 4;
    }
    for i in i..m {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a.data[i * inner..(i + 1) * inner].iter().enumerate() {
            if aik != 0.0 {
                axpy(orow, aik, &b.data[k * n..(k + 1) * n]);
            }
        }
    }
}

/// `out += a^T * b`
pub(crate) fn t_matmul_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let (m, ac, n) = (a.rows, a.cols, b.cols);
    let brow = |r: usize| &b.data[r * n..(r + 1) * n];
    let mut r = 0;
    while r + 4 <= m {
        let bs = [brow(r), brow(r + 1), brow(r + 2), brow(r + 3)];
        for i in 0..ac {
            let x = [
                a.data[r * ac + i],
                a.data[(r + 1) * ac + i],
                a.data[(r + 2) * ac + i],
                a.data[(r + 3) * ac + i],
            ];
            if x == [0.0; 4] {
                continue;
            }
            axpy4(&mut out.data[i * n..(i + 1) * n], x, bs);
        }
        r += 4;
    }
    for r in r..m {
        for (i, &ari) in a.data[r * ac..(r + 1) * ac].iter().enumerate() {
            if ari != 0.0 {
                axpy(&mut out.data[i * n..(i + 1) * n], ari, brow(r));
            }
        }
    }
}

/// `out += a * b^T`
pub(crate) fn matmul_t_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    if b.rows >= 8 {
        matmul_acc(a, &b.transpose(), out);
        return;
    }
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * out.cols + j] += dot(arow, b.row(j));
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, -1.0, 3.0]]);
        let b = Matrix::from_rows(&[[1.0, 0.5], [2.0, 0.0], [-1.0, 4.0]]);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab, Matrix::from_rows(&[[5.0, 0.5], [-5.0, 12.0]]));
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), ab);
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), ab);
    }

    #[test]
    fn blocked_kernels_match_naive_products() {
        let entry = |seed: usize| {
            move |i: usize, j: usize| {
                let k = (i * 31 + j * 17 + seed * 7) % 11;
                if k < 3 {
                    0.0
                } else {
                    k as f64 - 5.5
                }
            }
        };
        for m in 0..10 {
            for (inner, n) in [(1, 1), (3, 9), (8, 5), (13, 12)] {
                let a = Matrix::from_fn(m, inner, entry(1));
                let b = Matrix::from_fn(inner, n, entry(2));
                let naive = Matrix::from_fn(m, n, |i, j| (0..inner).map(|k| a[(i, k)] * b[(k, j)]).sum());
                let close = |x: &Matrix| x.sub(&naive).unwrap().max_abs() < 1e-12;
                assert!(close(&a.matmul(&b).unwrap()), "matmul {m}x{inner}x{n}");
                assert!(close(&a.matmul_t(&b.transpose()).unwrap()), "matmul_t {m}x{inner}x{n}");
                assert!(close(&a.transpose().t_matmul(&b).unwrap()), "t_matmul {m}x{inner}x{n}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::ShapeMismatch { op: "matmul", .. })));
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn norms() {
        let a = Matrix::from_rows(&[[1.0, -3.0], [2.0, 2.0]]);
        assert_eq!(a.max_abs(), 3.0);
        assert_eq!(a.norm_inf(), 4.0);
    }
}
