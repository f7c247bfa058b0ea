//! Ground-state spin-1 Hamiltonian of the NV center.
//!
//! The Hamiltonian is written in the `m_s = {+1, 0, −1}` basis of the axis-local
//! frame, in frequency units (MHz):
//!
//! `H = D·Sz² + E·(Sx² − Sy²) + γ·(Bx'·Sx + By'·Sy + Bz'·Sz)`
//!
//! where `B'` is the crystal-frame field rotated into the frame of one of the
//! four ⟨111⟩ defect axes.

pub mod eigen;

use num_complex::Complex;
use thiserror::Error;

use crate::num::Real;
use eigen::{jacobi_hermitian, Eigen3, Matrix3c};

pub use eigen::{hermitian_defect, off_diagonal_norm};

/// Electron gyromagnetic ratio, MHz/mT.
pub const GAMMA_NV: f64 = 28.024;
/// Room-temperature ground-state zero-field splitting, MHz.
pub const D_NV: f64 = 2870.0;
/// Default tolerance for merging coincident dips, MHz.
pub const DEFAULT_MERGE_TOL: f64 = 1.0;

/// Index of `m_s = 0` in the `{+1, 0, −1}` basis.
const MS0: usize = 1;
const GROUND_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("invalid Hamiltonian parameter: {0}")]
    InvalidParams(String),
    #[error("magnetic field components must be finite")]
    NonFiniteField,
    #[error("merge tolerance must be positive")]
    InvalidMergeTolerance,
}

/// Zero-field splitting `d`, strain `e` (MHz) and gyromagnetic ratio `gamma` (MHz/mT).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianParams<T = f64> {
    pub d: T,
    pub e: T,
    pub gamma: T,
}

impl<T: Real> HamiltonianParams<T> {
    pub fn new(d: T, e: T, gamma: T) -> Result<Self, SpinError> {
        if !(d > T::zero()) || !d.is_finite() {
            return Err(SpinError::InvalidParams(format!("D must be > 0, got {d}")));
        }
        if !(e >= T::zero()) || !e.is_finite() {
            return Err(SpinError::InvalidParams(format!("E must be >= 0, got {e}")));
        }
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(SpinError::InvalidParams(format!(
                "gamma must be > 0, got {gamma}"
            )));
        }
        Ok(Self { d, e, gamma })
    }

    /// Standard D and γ with the given strain.
    pub fn with_strain(e: T) -> Result<Self, SpinError> {
        Self::new(T::lit(D_NV), e, T::lit(GAMMA_NV))
    }

    /// Zero-field dip separation `2E`.
    pub fn zero_field_separation(&self) -> T {
        T::two() * self.e
    }
}

/// Static field in the cubic crystal frame, mT.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MagneticField<T = f64> {
    pub bx: T,
    pub by: T,
    pub bz: T,
}

impl<T: Real> MagneticField<T> {
    pub fn new(bx: T, by: T, bz: T) -> Result<Self, SpinError> {
        if bx.is_finite() && by.is_finite() && bz.is_finite() {
            Ok(Self { bx, by, bz })
        } else {
            Err(SpinError::NonFiniteField)
        }
    }

    pub fn zero() -> Self {
        Self {
            bx: T::zero(),
            by: T::zero(),
            bz: T::zero(),
        }
    }

    pub fn from_array(v: [T; 3]) -> Self {
        Self {
            bx: v[0],
            by: v[1],
            bz: v[2],
        }
    }

    /// Field of magnitude `magnitude` along `direction` (need not be normalized).
    pub fn along(direction: [T; 3], magnitude: T) -> Self {
        let n = norm(direction);
        if n == T::zero() {
            return Self::zero();
        }
        Self::from_array(direction.map(|c| c / n * magnitude))
    }

    pub fn to_array(self) -> [T; 3] {
        [self.bx, self.by, self.bz]
    }

    pub fn magnitude(&self) -> T {
        norm(self.to_array())
    }
}

impl<T: Real> std::ops::Neg for MagneticField<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::from_array(self.to_array().map(|c| -c))
    }
}

/// One of the four ⟨111⟩ defect orientations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvAxis<T = f64> {
    /// 1-based orientation index.
    pub index: usize,
    pub direction: [T; 3],
}

impl<T: Real> NvAxis<T> {
    /// Orthonormal frame `(x, y, z)` with `z` along the axis.
    ///
    /// `x` is crystal `[1,0,0]` with its `z` component removed; `[0,1,0]` is used
    /// when that projection vanishes.
    pub fn local_frame(&self) -> [[T; 3]; 3] {
        let z = self.direction;
        let mut x = reject([T::one(), T::zero(), T::zero()], z);
        if norm(x) < T::lit(1e-6) {
            x = reject([T::zero(), T::one(), T::zero()], z);
        }
        let n = norm(x);
        let x = x.map(|c| c / n);
        let y = cross(z, x);
        [x, y, z]
    }

    pub fn project(&self, b: &MagneticField<T>) -> T {
        dot(self.direction, b.to_array())
    }
}

/// The two `m_s = 0 → ±1` transition frequencies of one orientation, MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonancePair<T = f64> {
    pub f_minus: T,
    pub f_plus: T,
    /// Orientation that produced the pair; `None` for measured, unassigned pairs.
    pub axis: Option<NvAxis<T>>,
}

impl<T: Real> ResonancePair<T> {
    pub fn unlabeled(f_minus: T, f_plus: T) -> Self {
        let (lo, hi) = if f_minus <= f_plus {
            (f_minus, f_plus)
        } else {
            (f_plus, f_minus)
        };
        Self {
            f_minus: lo,
            f_plus: hi,
            axis: None,
        }
    }

    pub fn half_splitting(&self) -> T {
        (self.f_plus - self.f_minus) * T::half()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternDip<T = f64> {
    pub frequency: T,
    pub multiplicity: usize,
}

/// Merged ODMR dip positions over all four orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct DipPattern<T = f64> {
    pub dips: Vec<PatternDip<T>>,
}

impl<T: Real> DipPattern<T> {
    pub fn count(&self) -> usize {
        self.dips.len()
    }

    /// Distance between the outermost dips.
    pub fn spread(&self) -> T {
        match (self.dips.first(), self.dips.last()) {
            (Some(a), Some(b)) => b.frequency - a.frequency,
            _ => T::zero(),
        }
    }

    pub fn frequencies(&self) -> Vec<T> {
        self.dips.iter().map(|d| d.frequency).collect()
    }
}

/// The four ⟨111⟩ orientations, normalized, in fixed index order.
pub fn nv_axes<T: Real>() -> [NvAxis<T>; 4] {
    let s = T::one() / T::lit(3.0).sqrt();
    let signs: [[f64; 3]; 4] = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let mut i = 0;
    signs.map(|sg| {
        i += 1;
        NvAxis {
            index: i,
            direction: sg.map(|c| T::lit(c) * s),
        }
    })
}

/// Signed field projection on each axis, mT.
pub fn axis_projections<T: Real>(b: &MagneticField<T>, axes: &[NvAxis<T>]) -> Vec<T> {
    axes.iter().map(|a| a.project(b)).collect()
}

/// Spin-1 operators `[Sx, Sy, Sz]` in the `{+1, 0, −1}` basis.
pub fn spin_operators<T: Real>() -> [Matrix3c<T>; 3] {
    let z = Complex::new(T::zero(), T::zero());
    let r = T::one() / T::two().sqrt();
    let re = |v: T| Complex::new(v, T::zero());
    let im = |v: T| Complex::new(T::zero(), v);
    let sx = [[z, re(r), z], [re(r), z, re(r)], [z, re(r), z]];
    let sy = [[z, im(-r), z], [im(r), z, im(-r)], [z, im(r), z]];
    let sz = [[re(T::one()), z, z], [z, z, z], [z, z, re(-T::one())]];
    [sx, sy, sz]
}

/// Field components in the axis-local frame.
pub fn local_field<T: Real>(b: &MagneticField<T>, axis: &NvAxis<T>) -> [T; 3] {
    let frame = axis.local_frame();
    let v = b.to_array();
    frame.map(|e| dot(e, v))
}

/// Hamiltonian matrix (MHz) for one orientation.
pub fn build_hamiltonian<T: Real>(
    params: &HamiltonianParams<T>,
    b: &MagneticField<T>,
    axis: &NvAxis<T>,
) -> Matrix3c<T> {
    hamiltonian_local(params, local_field(b, axis))
}

fn hamiltonian_local<T: Real>(params: &HamiltonianParams<T>, bl: [T; 3]) -> Matrix3c<T> {
    let re = |v: T| Complex::new(v, T::zero());
    let z = re(T::zero());
    let g = params.gamma;
    // D·Sz² + E·(Sx² − Sy²)
    let mut h = [
        [re(params.d), z, re(params.e)],
        [z, z, z],
        [re(params.e), z, re(params.d)],
    ];
    let ops = spin_operators::<T>();
    for (op, &bc) in ops.iter().zip(bl.iter()) {
        let k = g * bc;
        if k == T::zero() {
            continue;
        }
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] += op[i][j] * k;
            }
        }
    }
    h
}

/// Index of the eigenstate with the largest `m_s = 0` weight.
fn ground_index<T: Real>(eig: &Eigen3<T>) -> usize {
    let tie = T::lit(GROUND_TIE_TOL);
    let mut best = 0;
    let mut best_w = eig.vectors[0][MS0].norm_sqr();
    for k in 1..3 {
        let w = eig.vectors[k][MS0].norm_sqr();
        // values are ascending, so on a tie the earlier (lower) state is kept
        if w > best_w + tie {
            best = k;
            best_w = w;
        }
    }
    best
}

/// ODMR transition frequencies for one orientation.
pub fn resonances<T: Real>(
    params: &HamiltonianParams<T>,
    b: &MagneticField<T>,
    axis: &NvAxis<T>,
) -> ResonancePair<T> {
    let eig = jacobi_hermitian(&build_hamiltonian(params, b, axis));
    let g = ground_index(&eig);
    let mut gaps = (0..3)
        .filter(|&k| k != g)
        .map(|k| (eig.values[k] - eig.values[g]).abs());
    let a = gaps.next().unwrap();
    let c = gaps.next().unwrap();
    ResonancePair {
        f_minus: a.min(c),
        f_plus: a.max(c),
        axis: Some(*axis),
    }
}

/// Resonance pair together with `∂f/∂B` (crystal frame) from Hellmann–Feynman.
#[derive(Debug, Clone, Copy)]
pub struct ResonanceGradient<T> {
    pub pair: ResonancePair<T>,
    pub d_minus: [T; 3],
    pub d_plus: [T; 3],
}

pub fn resonances_with_gradient<T: Real>(
    params: &HamiltonianParams<T>,
    b: &MagneticField<T>,
    axis: &NvAxis<T>,
) -> ResonanceGradient<T> {
    let frame = axis.local_frame();
    let bv = b.to_array();
    let bl = frame.map(|e| dot(e, bv));
    let eig = jacobi_hermitian(&hamiltonian_local(params, bl));
    let g = ground_index(&eig);
    let ops = spin_operators::<T>();

    // ∂λ_k/∂B_j = γ Σ_l frame[l][j] ⟨ψ_k|S_l|ψ_k⟩
    let grad = |k: usize| -> [T; 3] {
        let psi = &eig.vectors[k];
        let mut expect = [T::zero(); 3];
        for (l, op) in ops.iter().enumerate() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for i in 0..3 {
                for j in 0..3 {
                    acc += psi[i].conj() * op[i][j] * psi[j];
                }
            }
            expect[l] = acc.re;
        }
        let mut out = [T::zero(); 3];
        for (j, o) in out.iter_mut().enumerate() {
            *o = params.gamma * (0..3).map(|l| frame[l][j] * expect[l]).sum::<T>();
        }
        out
    };
    let gg = grad(g);
    let mut branches: Vec<(T, [T; 3])> = (0..3)
        .filter(|&k| k != g)
        .map(|k| {
            let gap = eig.values[k] - eig.values[g];
            let gk = grad(k);
            let sign = if gap < T::zero() { -T::one() } else { T::one() };
            let d = [0, 1, 2].map(|j| sign * (gk[j] - gg[j]));
            (gap.abs(), d)
        })
        .collect();
    branches.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    ResonanceGradient {
        pair: ResonancePair {
            f_minus: branches[0].0,
            f_plus: branches[1].0,
            axis: Some(*axis),
        },
        d_minus: branches[0].1,
        d_plus: branches[1].1,
    }
}

/// Resonance pairs for all four orientations, in axis order.
pub fn all_resonances<T: Real>(
    params: &HamiltonianParams<T>,
    b: &MagneticField<T>,
) -> [ResonancePair<T>; 4] {
    nv_axes::<T>().map(|a| resonances(params, b, &a))
}

/// Merges a list of frequencies into dips: sorted frequencies closer than
/// `merge_tol` to the previous member of a run join that run.
pub fn merge_frequencies<T: Real>(mut freqs: Vec<T>, merge_tol: T) -> DipPattern<T> {
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut groups: Vec<Vec<T>> = Vec::new();
    for f in freqs {
        match groups.last_mut() {
            Some(g) if f - *g.last().unwrap() < merge_tol => g.push(f),
            _ => groups.push(vec![f]),
        }
    }
    let dips = groups
        .into_iter()
        .map(|g| PatternDip {
            frequency: g.iter().copied().sum::<T>() / T::from_usize_lossy(g.len()),
            multiplicity: g.len(),
        })
        .collect();
    DipPattern { dips }
}

/// Merged dip pattern over all four orientations.
pub fn zeeman_pattern<T: Real>(
    params: &HamiltonianParams<T>,
    b: &MagneticField<T>,
    merge_tol: T,
) -> Result<DipPattern<T>, SpinError> {
    if !(merge_tol > T::zero()) {
        return Err(SpinError::InvalidMergeTolerance);
    }
    let freqs = all_resonances(params, b)
        .iter()
        .flat_map(|p| [p.f_minus, p.f_plus])
        .collect();
    Ok(merge_frequencies(freqs, merge_tol))
}

pub(crate) fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm<T: Real>(a: [T; 3]) -> T {
    dot(a, a).sqrt()
}

fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn reject<T: Real>(v: [T; 3], unit: [T; 3]) -> [T; 3] {
    let p = dot(v, unit);
    [v[0] - p * unit[0], v[1] - p * unit[1], v[2] - p * unit[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3b() -> HamiltonianParams {
        HamiltonianParams::with_strain(2.82).unwrap()
    }

    #[test]
    fn axes_are_unit_and_tetrahedral() {
        let axes = nv_axes::<f64>();
        let s = 1.0 / 3f64.sqrt();
        assert!((axes[0].direction[0] - s).abs() < 1e-15);
        assert!((axes[0].direction[0] - 0.5774).abs() < 1e-4);
        for (i, a) in axes.iter().enumerate() {
            assert_eq!(a.index, i + 1);
            assert!((norm(a.direction) - 1.0).abs() < 1e-12);
            for b in &axes[i + 1..] {
                assert!((dot(a.direction, b.direction) + 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_frames_are_orthonormal() {
        for a in nv_axes::<f64>() {
            let f = a.local_frame();
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(f[i], f[j]) - expect).abs() < 1e-12);
                }
            }
            // right-handed
            let c = cross(f[0], f[1]);
            assert!((dot(c, f[2]) - 1.0).abs() < 1e-12);
        }
        // fallback branch: an axis along [1,0,0]
        let a: NvAxis<f64> = NvAxis {
            index: 0,
            direction: [1.0, 0.0, 0.0],
        };
        let f = a.local_frame();
        assert!((f[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_field_no_strain_is_diagonal() {
        let p = HamiltonianParams::new(2870.0, 0.0, GAMMA_NV).unwrap();
        let h = build_hamiltonian(&p, &MagneticField::zero(), &nv_axes()[0]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = match (i, j) {
                    (0, 0) | (2, 2) => 2870.0,
                    _ => 0.0,
                };
                assert_eq!(h[i][j], Complex::new(expect, 0.0));
            }
        }
    }

    #[test]
    fn zero_field_with_strain_eigenvalues() {
        let p = fig3b();
        let h = build_hamiltonian(&p, &MagneticField::zero(), &nv_axes()[2]);
        let e = jacobi_hermitian(&h);
        assert!(e.values[0].abs() < 1e-12);
        assert!((e.values[1] - (2870.0 - 2.82)).abs() < 1e-9);
        assert!((e.values[2] - (2870.0 + 2.82)).abs() < 1e-9);
    }

    #[test]
    fn hamiltonian_is_hermitian_with_fixed_trace() {
        let p = fig3b();
        let b = MagneticField::new(0.3, 0.7, 1.1).unwrap();
        for a in nv_axes() {
            let h = build_hamiltonian(&p, &b, &a);
            assert!(hermitian_defect(&h) < 1e-12);
            let tr: f64 = (0..3).map(|i| h[i][i].re).sum();
            assert!((tr - 2.0 * p.d).abs() < 1e-9);
        }
    }

    #[test]
    fn axial_field_eigen_gaps() {
        let p = fig3b();
        let axis = nv_axes()[0];
        let b = MagneticField::along(axis.direction, 1.0);
        let e = jacobi_hermitian(&build_hamiltonian(&p, &b, &axis));
        let s = (2.82f64.powi(2) + 28.024f64.powi(2)).sqrt();
        assert!((s - 28.1655).abs() < 1e-3);
        assert!((e.values[1] - e.values[0] - (2870.0 - s)).abs() < 1e-9);
        assert!((e.values[2] - e.values[0] - (2870.0 + s)).abs() < 1e-9);
    }

    #[test]
    fn resonance_examples() {
        let p = fig3b();
        let r = resonances(&p, &MagneticField::zero(), &nv_axes()[0]);
        assert!((r.f_minus - 2867.18).abs() < 1e-9);
        assert!((r.f_plus - 2872.82).abs() < 1e-9);

        let p0 = HamiltonianParams::<f64>::new(2870.0, 0.0, 28.024).unwrap();
        let axis = nv_axes()[1];
        let r = resonances(&p0, &MagneticField::along(axis.direction, 1.0), &axis);
        assert!((r.f_minus - 2841.976).abs() < 1e-6);
        assert!((r.f_plus - 2898.024).abs() < 1e-6);
        assert_eq!(r.axis.unwrap().index, 2);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = fig3b();
        let b = MagneticField::new(0.3, 0.7, 1.1).unwrap();
        for axis in nv_axes() {
            let g = resonances_with_gradient(&p, &b, &axis);
            let r = resonances(&p, &b, &axis);
            assert_eq!(g.pair.f_minus, r.f_minus);
            for j in 0..3 {
                let h = 1e-6;
                let mut bp = b.to_array();
                let mut bm = b.to_array();
                bp[j] += h;
                bm[j] -= h;
                let rp = resonances(&p, &MagneticField::from_array(bp), &axis);
                let rm = resonances(&p, &MagneticField::from_array(bm), &axis);
                let fd_minus = (rp.f_minus - rm.f_minus) / (2.0 * h);
                let fd_plus = (rp.f_plus - rm.f_plus) / (2.0 * h);
                assert!((fd_minus - g.d_minus[j]).abs() < 1e-4, "{fd_minus} {}", g.d_minus[j]);
                assert!((fd_plus - g.d_plus[j]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn projections_examples() {
        let axes = nv_axes::<f64>();
        assert_eq!(axis_projections(&MagneticField::zero(), &axes), vec![0.0; 4]);
        let p = axis_projections(&MagneticField::new(1.0, 0.0, 0.0).unwrap(), &axes);
        let s = 1.0 / 3f64.sqrt();
        for (got, want) in p.iter().zip([s, s, -s, -s]) {
            assert!((got - want).abs() < 1e-12);
        }
        let b = MagneticField::along([1.0, 1.0, 1.0], 2.0);
        let p = axis_projections(&b, &axes);
        assert!((p[0] - 2.0).abs() < 1e-12);
        for v in &p[1..] {
            assert!((v + 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pattern_counts() {
        let p = fig3b();
        let count = |dir: [f64; 3]| {
            zeeman_pattern(&p, &MagneticField::along(dir, 2.0), 1.0)
                .unwrap()
                .count()
        };
        assert_eq!(count([1.0, 0.0, 0.0]), 2);
        assert_eq!(count([1.0, 1.0, 1.0]), 4);
        assert_eq!(count([1.0, 1.0, 0.3]), 6);
        assert_eq!(count([1.0, 0.5, 0.25]), 8);
        let pat = zeeman_pattern(&p, &MagneticField::along([1.0, 0.0, 0.0], 2.0), 1.0).unwrap();
        assert!(pat.dips.iter().all(|d| d.multiplicity == 4));
    }

    #[test]
    fn pattern_rejects_bad_tolerance() {
        let p = fig3b();
        assert_eq!(
            zeeman_pattern(&p, &MagneticField::zero(), 0.0),
            Err(SpinError::InvalidMergeTolerance)
        );
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(HamiltonianParams::new(0.0, 1.0, 28.0).is_err());
        assert!(HamiltonianParams::new(2870.0, -1.0, 28.0).is_err());
        assert!(HamiltonianParams::new(2870.0, 1.0, 0.0).is_err());
        assert!(MagneticField::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn single_precision_resonances() {
        let p = HamiltonianParams::<f32>::with_strain(2.82).unwrap();
        let r = resonances(&p, &MagneticField::zero(), &nv_axes()[0]);
        assert!((r.f_minus - 2867.18).abs() < 1e-3);
        assert!((r.f_plus - 2872.82).abs() < 1e-3);
    }
}
