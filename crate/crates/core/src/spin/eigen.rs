//! Cyclic Jacobi diagonalization of 3×3 complex Hermitian matrices.

use num_complex::Complex;

use crate::num::Real;

/// Dense 3×3 complex matrix, `m[row][col]`.
pub type Matrix3c<T> = [[Complex<T>; 3]; 3];

const MAX_SWEEPS: usize = 50;
const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Eigenvalues in ascending order with matching unit eigenvectors.
///
/// `vectors[k]` is the eigenvector for `values[k]`, expressed in the basis the
/// input matrix was written in.
#[derive(Debug, Clone)]
pub struct Eigen3<T> {
    pub values: [T; 3],
    pub vectors: [[Complex<T>; 3]; 3],
    pub sweeps: usize,
}

/// Frobenius norm of the strictly off-diagonal part.
pub fn off_diagonal_norm<T: Real>(a: &Matrix3c<T>) -> T {
    let mut s = T::zero();
    for (p, q) in PAIRS {
        s += a[p][q].norm_sqr() + a[q][p].norm_sqr();
    }
    s.sqrt()
}

pub fn hermitian_defect<T: Real>(a: &Matrix3c<T>) -> T {
    let mut worst = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((a[i][j] - a[j][i].conj()).norm());
        }
    }
    worst
}

/// Diagonalizes a Hermitian matrix by cyclic two-sided unitary rotations.
///
/// Each rotation first removes the phase of the pivot element, then applies a
/// real Jacobi rotation that annihilates it. Sweeps continue until the
/// off-diagonal Frobenius norm drops below `max(1e-12, 8·eps·‖A‖)`.
pub fn jacobi_hermitian<T: Real>(h: &Matrix3c<T>) -> Eigen3<T> {
    let zero = Complex::new(T::zero(), T::zero());
    let one = Complex::new(T::one(), T::zero());
    let mut a = *h;
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = Complex::new(row[i].re, T::zero());
    }
    let mut v = [[zero; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = one;
    }

    let mut norm = T::zero();
    for row in &a {
        for z in row {
            norm += z.norm_sqr();
        }
    }
    let tol = T::lit(1e-12).max(T::lit(8.0) * T::epsilon() * norm.sqrt());

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && off_diagonal_norm(&a) >= tol {
        sweeps += 1;
        for (p, q) in PAIRS {
            let apq = a[p][q];
            let r = apq.norm();
            if r == T::zero() {
                continue;
            }
            let phase = apq / r;
            let app = a[p][p].re;
            let aqq = a[q][q].re;
            let theta = (aqq - app) / (T::two() * r);
            let t = if theta == T::zero() {
                T::one()
            } else {
                theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt())
            };
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;

            // W = diag(1, e^{-iφ}) · [[c, s], [-s, c]] acting on (p, q).
            let ph = phase.conj();
            let w_pp = Complex::new(c, T::zero());
            let w_pq = Complex::new(s, T::zero());
            let w_qp = ph * (-s);
            let w_qq = ph * c;

            // A ← A·W (columns p, q)
            for row in a.iter_mut() {
                let ap = row[p];
                let aq = row[q];
                row[p] = ap * w_pp + aq * w_qp;
                row[q] = ap * w_pq + aq * w_qq;
            }
            // A ← W†·A (rows p, q)
            for col in 0..3 {
                let ap = a[p][col];
                let aq = a[q][col];
                a[p][col] = w_pp.conj() * ap + w_qp.conj() * aq;
                a[q][col] = w_pq.conj() * ap + w_qq.conj() * aq;
            }
            a[p][q] = zero;
            a[q][p] = zero;
            a[p][p] = Complex::new(app - t * r, T::zero());
            a[q][q] = Complex::new(aqq + t * r, T::zero());

            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = vp * w_pp + vq * w_qp;
                row[q] = vp * w_pq + vq * w_qq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].re.partial_cmp(&a[j][j].re).unwrap());
    let values = order.map(|k| a[k][k].re);
    let vectors = order.map(|k| [v[0][k], v[1][k], v[2][k]]);
    Eigen3 {
        values,
        vectors,
        sweeps,
    }
}
