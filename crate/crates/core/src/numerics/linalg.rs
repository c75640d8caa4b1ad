//! Dense solvers for oracle-scale problems.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Matrix, Result};

const PIVOT_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// Solves `m * x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if m.cols() != n || b.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "dense_solve",
            lhs: m.shape(),
            rhs: b.shape(),
        });
    }
    let nrhs = b.cols();
    let mut a = m.clone();
    let mut x = b.clone();
    for col in 0..n {
        let (piv, pmax) =
            (col..n)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax < PIVOT_TOL {
            return Err(Error::Singular {
                column: col,
                pivot: pmax,
            });
        }
        if piv != col {
            for c in 0..n {
                let tmp = a[(col, c)];
                a[(col, c)] = a[(piv, c)];
                a[(piv, c)] = tmp;
            }
            for c in 0..nrhs {
                let tmp = x[(col, c)];
                x[(col, c)] = x[(piv, c)];
                x[(piv, c)] = tmp;
            }
        }
        let d = a[(col, col)];
        for r in col + 1..n {
            let f = a[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            a[(r, col)] = 0.0;
            for c in col + 1..n {
                a[(r, c)] -= f * a[(col, c)];
            }
            for c in 0..nrhs {
                x[(r, c)] -= f * x[(col, c)];
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[(col, col)];
        for c in 0..nrhs {
            let mut s = x[(col, c)];
            for k in col + 1..n {
                s -= a[(col, k)] * x[(k, c)];
            }
            x[(col, c)] = s / d;
        }
    }
    Ok(x)
}

pub fn inverse(m: &Matrix) -> Result<Matrix> {
    dense_solve(m, &Matrix::identity(m.rows()))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector of `values[k]`.
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.vectors.rows()).map(|r| self.vectors[(r, k)]).collect()
    }
}

pub(crate) fn asymmetry(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cyclic Jacobi rotations on a symmetric matrix.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "sym_eigen",
            lhs: m.shape(),
            rhs: (n, n),
        });
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if math::sqrt(off) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                // A <- J^T A J on rows/columns p and q
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, k| v[(r, order[k])]);
    Ok(SymEigen { values, vectors })
}
