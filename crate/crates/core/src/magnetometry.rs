//! Field information from resonance frequencies: axial projections, full
//! vector inversion over all orientation assignments, and pattern classification.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use crate::num::Real;
use crate::spin::{
    axis_projections, nv_axes, resonances, resonances_with_gradient, zeeman_pattern, DipPattern,
    HamiltonianParams, MagneticField, NvAxis, ResonancePair, SpinError,
};

/// Residual rms (MHz) above which a solution is flagged inconsistent.
pub const DEFAULT_INCONSISTENCY_MHZ: f64 = 1.0;
/// Projection magnitudes closer than this (mT) are reported as degenerate.
pub const DEGENERACY_GAP_MT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagnetometryError {
    #[error("half splitting {half_splitting} MHz is below the strain term E = {e} MHz")]
    Inconsistent { half_splitting: f64, e: f64 },
    #[error("invalid resonance pair: {0}")]
    InvalidPair(String),
    #[error("vector inversion needs exactly 4 resonance pairs, got {0}")]
    Unsupported(usize),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

fn check_pair<T: Real>(pair: &ResonancePair<T>) -> Result<(), MagnetometryError> {
    if !pair.f_minus.is_finite() || !pair.f_plus.is_finite() {
        return Err(MagnetometryError::InvalidPair("frequencies must be finite".into()));
    }
    if pair.f_plus < pair.f_minus {
        return Err(MagnetometryError::InvalidPair(format!(
            "f_plus {} < f_minus {}",
            pair.f_plus, pair.f_minus
        )));
    }
    Ok(())
}

/// Axial estimate `|B∥| = √(s² − E²)/γ` from the half splitting `s` of a pair.
pub fn projection_from_pair<T: Real>(
    pair: &ResonancePair<T>,
    params: &HamiltonianParams<T>,
) -> Result<T, MagnetometryError> {
    check_pair(pair)?;
    let s = pair.half_splitting();
    let e = params.e.abs();
    if (s - e).abs() <= T::lit(1e-6) {
        return Ok(T::zero());
    }
    if s < e {
        return Err(MagnetometryError::Inconsistent {
            half_splitting: s.as_f64(),
            e: e.as_f64(),
        });
    }
    Ok((s * s - e * e).sqrt() / params.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegeneracyFlag {
    /// |B| below the degeneracy gap; orientation is meaningless.
    ZeroField,
    /// Two orientations see the same |projection|, so their pairs are interchangeable.
    EqualProjections { axes: (usize, usize) },
    /// The field is nearly perpendicular to an orientation; its projection sign is undetermined.
    Perpendicular { axis: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldEstimate<T = f64> {
    /// Representative with `bx ≥ by ≥ bz ≥ 0`, mT.
    pub b: MagneticField<T>,
    /// Field found by the solver before canonicalization; equivalent to `b`.
    pub b_solved: MagneticField<T>,
    /// MHz
    pub residual_rms: T,
    /// `assignment[i]` is the orientation matched to input pair `i`.
    pub assignment: [NvAxis<T>; 4],
    pub degenerate_flags: Vec<DegeneracyFlag>,
    pub consistent: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T = f64> {
    pub inconsistency_threshold: T,
    pub lm: LmOptions<T>,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            inconsistency_threshold: T::lit(DEFAULT_INCONSISTENCY_MHZ),
            lm: LmOptions::default(),
        }
    }
}

/// Representative of `b` under sign flips and permutations of the crystal axes.
pub fn canonicalize<T: Real>(b: &MagneticField<T>) -> MagneticField<T> {
    let mut v = b.to_array().map(|c| c.abs());
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    MagneticField::from_array(v)
}

/// All permutations of `0..4` in lexicographic order.
fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let mut seen = [false; 4];
                    p.iter().for_each(|&i| seen[i] = true);
                    if seen.iter().all(|&s| s) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

struct FieldProblem<'a, T> {
    params: &'a HamiltonianParams<T>,
    pairs: &'a [ResonancePair<T>],
    axes: [NvAxis<T>; 4],
}

impl<T: Real> LeastSquaresProblem<T> for FieldProblem<'_, T> {
    fn n_params(&self) -> usize {
        3
    }

    fn n_residuals(&self) -> usize {
        8
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        let b = MagneticField::from_array([p[0], p[1], p[2]]);
        for (i, (pair, axis)) in self.pairs.iter().zip(&self.axes).enumerate() {
            let r = resonances(self.params, &b, axis);
            out[2 * i] = r.f_minus - pair.f_minus;
            out[2 * i + 1] = r.f_plus - pair.f_plus;
        }
    }

    fn jacobian(&self, p: &[T], jac: &mut Matrix<T>) {
        let b = MagneticField::from_array([p[0], p[1], p[2]]);
        for (i, axis) in self.axes.iter().enumerate() {
            let g = resonances_with_gradient(self.params, &b, axis);
            jac.row_mut(2 * i).copy_from_slice(&g.d_minus);
            jac.row_mut(2 * i + 1).copy_from_slice(&g.d_plus);
        }
    }
}

struct Branch<T> {
    key: usize,
    b: [T; 3],
    cost: T,
    iterations: usize,
    perm: [usize; 4],
}

/// Recovers B from four unassigned resonance pairs.
///
/// Every assignment of pairs to orientations is tried, each from the axial
/// projection estimates under every relative sign choice (the overall sign is
/// fixed because B and −B give identical spectra). The lowest residual wins,
/// ties going to the earlier (assignment, sign) index.
pub fn solve_b_vector<T: Real>(
    pairs: &[ResonancePair<T>],
    params: &HamiltonianParams<T>,
) -> Result<FieldEstimate<T>, MagnetometryError> {
    solve_b_vector_with(pairs, params, &SolveOptions::default())
}

pub fn solve_b_vector_with<T: Real>(
    pairs: &[ResonancePair<T>],
    params: &HamiltonianParams<T>,
    opts: &SolveOptions<T>,
) -> Result<FieldEstimate<T>, MagnetometryError> {
    if pairs.len() != 4 {
        return Err(MagnetometryError::Unsupported(pairs.len()));
    }
    pairs.iter().try_for_each(check_pair)?;
    let axes = nv_axes::<T>();
    // axial magnitudes, clamped at zero for pairs squeezed below E by noise
    let mags: Vec<T> = pairs
        .iter()
        .map(|p| {
            let s = p.half_splitting();
            (s * s - params.e * params.e).max(T::zero()).sqrt() / params.gamma
        })
        .collect();

    let mut lm = opts.lm;
    let scale = T::lit(1e3) * T::epsilon() * params.d.abs().max(T::one());
    lm.cost_floor = lm.cost_floor.max(T::lit(8.0) * scale * scale);

    let perms = permutations4();
    let jobs: Vec<(usize, [usize; 4], u8)> = perms
        .iter()
        .enumerate()
        .flat_map(|(pi, &perm)| (0..8u8).map(move |s| (pi * 8 + s as usize, perm, s)))
        .collect();
    let branches: Vec<Branch<T>> = jobs
        .par_iter()
        .map(|&(key, perm, signs)| {
            let assigned = perm.map(|k| axes[k]);
            // least-squares B from four projections: the ⟨111⟩ frame gives AᵀA = (4/3)·I
            let mut b0 = [T::zero(); 3];
            for (i, axis) in assigned.iter().enumerate() {
                let sign = if i > 0 && signs & (1 << (i - 1)) != 0 {
                    -T::one()
                } else {
                    T::one()
                };
                for j in 0..3 {
                    b0[j] += T::lit(0.75) * sign * mags[i] * axis.direction[j];
                }
            }
            let problem = FieldProblem {
                params,
                pairs,
                axes: assigned,
            };
            let rep = levenberg_marquardt(&problem, &b0, &lm);
            Branch {
                key,
                b: [rep.params[0], rep.params[1], rep.params[2]],
                cost: rep.cost,
                iterations: rep.iterations,
                perm,
            }
        })
        .collect();

    let best = branches
        .iter()
        .min_by(|a, b| {
            a.cost
                .partial_cmp(&b.cost)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.key.cmp(&b.key))
        })
        .expect("search space is nonempty");

    let b_solved = MagneticField::from_array(best.b);
    let residual_rms = (best.cost / T::lit(8.0)).sqrt();
    Ok(FieldEstimate {
        b: canonicalize(&b_solved),
        b_solved,
        residual_rms,
        assignment: best.perm.map(|k| axes[k]),
        degenerate_flags: degeneracy_flags(&b_solved),
        consistent: residual_rms.is_finite() && residual_rms <= opts.inconsistency_threshold,
        iterations: branches.iter().map(|b| b.iterations).sum(),
    })
}

/// Symmetry notes for a field: near-zero magnitude, coincident projection
/// magnitudes, and near-perpendicular orientations.
pub fn degeneracy_flags<T: Real>(b: &MagneticField<T>) -> Vec<DegeneracyFlag> {
    let gap = T::lit(DEGENERACY_GAP_MT);
    if b.magnitude() < gap {
        return vec![DegeneracyFlag::ZeroField];
    }
    let axes = nv_axes::<T>();
    let proj: Vec<T> = axis_projections(b, &axes).iter().map(|p| p.abs()).collect();
    let mut flags = Vec::new();
    for i in 0..4 {
        if proj[i] < gap {
            flags.push(DegeneracyFlag::Perpendicular { axis: axes[i].index });
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if (proj[i] - proj[j]).abs() < gap {
                flags.push(DegeneracyFlag::EqualProjections {
                    axes: (axes[i].index, axes[j].index),
                });
            }
        }
    }
    flags
}

/// Orientations whose resonance pairs coincide, with their shared |projection|.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGroup<T = f64> {
    /// mT
    pub projection: T,
    /// 1-based orientation indices.
    pub axes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternClass<T = f64> {
    pub count: usize,
    pub pattern: DipPattern<T>,
    /// Sorted by increasing projection.
    pub groups: Vec<ProjectionGroup<T>>,
}

pub fn classify_pattern<T: Real>(
    b: &MagneticField<T>,
    params: &HamiltonianParams<T>,
    merge_tol: T,
) -> Result<PatternClass<T>, MagnetometryError> {
    let pattern = zeeman_pattern(params, b, merge_tol)?;
    let axes = nv_axes::<T>();
    let proj = axis_projections(b, &axes);
    let pairs: Vec<ResonancePair<T>> = axes.iter().map(|a| resonances(params, b, a)).collect();

    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| {
        pairs[i]
            .half_splitting()
            .partial_cmp(&pairs[j].half_splitting())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        let joins = groups.last().is_some_and(|g| {
            let j = *g.last().unwrap();
            (pairs[i].f_minus - pairs[j].f_minus).abs() <= merge_tol
                && (pairs[i].f_plus - pairs[j].f_plus).abs() <= merge_tol
        });
        if joins {
            groups.last_mut().unwrap().push(i);
        } else {
            groups.push(vec![i]);
        }
    }
    let groups = groups
        .into_iter()
        .map(|g| ProjectionGroup {
            projection: g.iter().map(|&i| proj[i].abs()).sum::<T>() / T::from_usize_lossy(g.len()),
            axes: g.iter().map(|&i| axes[i].index).collect(),
        })
        .collect();
    Ok(PatternClass {
        count: pattern.count(),
        pattern,
        groups,
    })
}
