//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nvodmr::spin::MagneticField;
use num_complex::Complex;

/// Eigenvalues of a 3×3 Hermitian matrix from the roots of its characteristic
/// polynomial (trigonometric cubic solution), ascending.
pub fn cubic_eigenvalues(h: &[[Complex<f64>; 3]; 3]) -> [f64; 3] {
    let m = (h[0][0].re + h[1][1].re + h[2][2].re) / 3.0;
    let mut b = *h;
    for (i, row) in b.iter_mut().enumerate() {
        row[i] -= m;
    }
    // λ³ + pλ + q for the traceless shifted matrix
    let minor = |i: usize, j: usize| (b[i][i] * b[j][j] - b[i][j] * b[j][i]).re;
    let p = minor(0, 1) + minor(0, 2) + minor(1, 2);
    let det = (b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]))
        .re;
    let q = -det;
    if p.abs() < 1e-300 {
        return [m; 3];
    }
    let r = 2.0 * (-p / 3.0).sqrt();
    let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
    let phi = arg.acos() / 3.0;
    let mut roots = [0, 1, 2].map(|k| m + r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos());
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

/// Signed permutation matrices map the ⟨111⟩ axis set onto itself (up to sign).
pub fn signed_permutations() -> Vec<[[f64; 3]; 3]> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::new();
    for perm in perms {
        for signs in 0..8 {
            let mut m = [[0.0; 3]; 3];
            for (row, &col) in perm.iter().enumerate() {
                m[row][col] = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            out.push(m);
        }
    }
    out
}

pub fn apply(m: &[[f64; 3]; 3], b: &MagneticField) -> MagneticField {
    let v = b.to_array();
    MagneticField::from_array([0, 1, 2].map(|i| (0..3).map(|j| m[i][j] * v[j]).sum()))
}
