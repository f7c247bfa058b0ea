//! Small dense linear algebra for the least-squares solvers.
//!
//! Problem sizes here are tiny (at most a few dozen parameters), so a plain
//! row-major matrix and a Cholesky factorization are all that is needed.

use crate::num::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Computes `JᵀJ` and `Jᵀr` in one pass over the rows.
    pub fn normal_equations(&self, residuals: &[T]) -> (Matrix<T>, Vec<T>) {
        assert_eq!(residuals.len(), self.rows);
        let n = self.cols;
        let mut jtj = Matrix::zeros(n, n);
        let mut jtr = vec![T::zero(); n];
        for (r, &res) in residuals.iter().enumerate() {
            let row = self.row(r);
            for i in 0..n {
                let ji = row[i];
                if ji == T::zero() {
                    continue;
                }
                jtr[i] += ji * res;
                for j in i..n {
                    jtj.data[i * n + j] += ji * row[j];
                }
            }
        }
        for i in 1..n {
            for j in 0..i {
                jtj.data[i * n + j] = jtj.data[j * n + i];
            }
        }
        (jtj, jtr)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        let n = a.rows();
        debug_assert_eq!(n, a.cols());
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(Self { l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = self.l[(i, k)] * y[k];
                y[i] -= v;
            }
            y[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let v = self.l[(k, i)] * y[k];
                y[i] -= v;
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.l.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[c] = T::one();
            let col = self.solve(&e);
            for (r, v) in col.into_iter().enumerate() {
                inv[(r, c)] = v;
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let mut a = Matrix::<f64>::zeros(3, 3);
        let vals = [[4.0, 12.0, -16.0], [12.0, 37.0, -43.0], [-16.0, -43.0, 98.0]];
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = vals[i][j];
            }
        }
        let ch = Cholesky::new(&a).unwrap();
        let x = ch.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| vals[i][j] * x[j]).sum();
            assert!((ax - [1.0, 2.0, 3.0][i]).abs() < 1e-10);
        }
        let inv = ch.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let p: f64 = (0..3).map(|k| vals[i][k] * inv[(k, j)]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((p - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = Matrix::<f32>::identity(2);
        a[(1, 1)] = -1.0;
        assert!(Cholesky::new(&a).is_none());
    }

    #[test]
    fn normal_equations_match_explicit_product() {
        let mut j = Matrix::<f64>::zeros(3, 2);
        j.row_mut(0).copy_from_slice(&[1.0, 2.0]);
        j.row_mut(1).copy_from_slice(&[0.0, 1.0]);
        j.row_mut(2).copy_from_slice(&[3.0, -1.0]);
        let (jtj, jtr) = j.normal_equations(&[1.0, 1.0, 2.0]);
        assert_eq!(jtj[(0, 0)], 10.0);
        assert_eq!(jtj[(0, 1)], -1.0);
        assert_eq!(jtj[(1, 0)], -1.0);
        assert_eq!(jtj[(1, 1)], 6.0);
        assert_eq!(jtr, vec![7.0, 1.0]);
    }
}
