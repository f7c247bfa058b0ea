//! Dip detection and multi-Lorentzian least-squares fitting with model
//! selection over the number of dips.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{Cholesky, Matrix};
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions, Termination};
use crate::num::Real;
use crate::signal::{lorentzian_spectrum, DipSpec, SignalError, SpectrumTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
    #[error("at least one initial dip is required")]
    NoInitialDips,
    #[error("{got} points cannot constrain the model; need at least {needed}")]
    InsufficientData { needed: usize, got: usize },
    #[error("candidate dip counts must be nonempty and each >= 1")]
    InvalidCandidates,
    #[error("no candidate fit converged: {}", summarize(.0))]
    AllCandidatesFailed(Vec<CandidateDiagnostic>),
    #[error(transparent)]
    Trace(#[from] SignalError),
}

fn summarize(diags: &[CandidateDiagnostic]) -> String {
    diags
        .iter()
        .map(|d| {
            format!(
                "{} dips: {:?} after {} iterations, rms {:.3e}",
                d.n_dips, d.termination, d.iterations, d.rms_residual
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDiagnostic {
    pub n_dips: usize,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub rms_residual: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig<T = f64> {
    /// Moving-average window in points; odd.
    pub smooth_window: usize,
    /// Minimum prominence as a fraction of the baseline.
    pub min_prominence: T,
    pub max_dips: usize,
}

impl<T: Real> Default for DetectConfig<T> {
    fn default() -> Self {
        Self {
            smooth_window: 5,
            min_prominence: T::lit(0.005),
            max_dips: 8,
        }
    }
}

impl<T: Real> DetectConfig<T> {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return Err(FitError::InvalidConfig(format!(
                "smooth_window must be odd and >= 1, got {}",
                self.smooth_window
            )));
        }
        if !(self.min_prominence > T::zero() && self.min_prominence < T::one()) {
            return Err(FitError::InvalidConfig(format!(
                "min_prominence must be in (0, 1), got {}",
                self.min_prominence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T = f64> {
    pub baseline: T,
    /// Sorted by center frequency.
    pub dips: Vec<DipSpec<T>>,
    /// Linearized covariance of `[baseline, f0₁, Γ₁, c₁, f0₂, …]` in the order of `dips`.
    /// Entries are NaN when the normal matrix is singular.
    pub covariance: Matrix<T>,
    pub rms_residual: T,
    /// Sum of squared residuals.
    pub rss: T,
    pub n_points: usize,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub cost_history: Vec<T>,
}

impl<T: Real> FitResult<T> {
    pub fn n_params(&self) -> usize {
        3 * self.dips.len() + 1
    }

    /// `N·ln(rss/N) + k·ln N`, with rss floored at the rounding level of the data.
    pub fn bic(&self) -> T {
        let n = T::from_usize_lossy(self.n_points);
        let k = T::from_usize_lossy(self.n_params());
        let rss = self.rss.max(rss_floor(self.n_points, self.baseline.abs()));
        n * (rss / n).ln() + k * n.ln()
    }

    /// Square roots of the covariance diagonal.
    pub fn std_errors(&self) -> Vec<T> {
        (0..self.covariance.rows())
            .map(|i| self.covariance[(i, i)].abs().sqrt())
            .collect()
    }

    /// Model value at `f`.
    pub fn evaluate(&self, f: T) -> T {
        lorentzian_spectrum(&self.dips, self.baseline, f)
    }
}

fn rss_floor<T: Real>(n: usize, scale: T) -> T {
    let e = T::lit(16.0) * T::epsilon() * scale.max(T::min_positive_value());
    T::from_usize_lossy(n) * e * e
}

fn check_trace<T: Real>(trace: &SpectrumTrace<T>) -> Result<(), FitError> {
    trace.validate()?;
    if let Some(i) = trace
        .frequencies
        .iter()
        .zip(&trace.signal)
        .position(|(f, s)| !f.is_finite() || !s.is_finite())
    {
        return Err(SignalError::InvalidTrace(format!("non-finite value at index {i}")).into());
    }
    Ok(())
}

/// Centered moving average; windows are truncated at the ends.
pub fn moving_average<T: Real>(y: &[T], window: usize) -> Vec<T> {
    let half = window / 2;
    let mut prefix = Vec::with_capacity(y.len() + 1);
    prefix.push(T::zero());
    let mut acc = T::zero();
    for &v in y {
        acc += v;
        prefix.push(acc);
    }
    (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(y.len());
            (prefix[hi] - prefix[lo]) / T::from_usize_lossy(hi - lo)
        })
        .collect()
}

/// Off-resonance level: the 90th percentile of the signal.
pub fn estimate_baseline<T: Real>(y: &[T]) -> T {
    if y.is_empty() {
        return T::zero();
    }
    let mut v = y.to_vec();
    let k = ((v.len() - 1) * 9) / 10;
    let (_, x, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp_real(b));
    *x
}

/// White-noise level from the median absolute second difference.
pub fn estimate_noise<T: Real>(y: &[T]) -> T {
    if y.len() < 3 {
        return T::zero();
    }
    let mut d: Vec<T> = y
        .windows(3)
        .map(|w| (w[0] - T::two() * w[1] + w[2]).abs())
        .collect();
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp_real(b));
    // second differences of white noise have standard deviation σ·√6
    T::lit(1.4826) * *m / T::lit(6.0).sqrt()
}

trait TotalCmp {
    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering;
}

impl<T: Real> TotalCmp for T {
    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap_or(std::cmp::Ordering::Equal)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    dip: DipSpec<T>,
    prominence: T,
}

/// Prominence of the minimum at `i`: the smaller of the two climbs needed
/// before reaching a lower value (or the trace end) on either side.
fn prominence<T: Real>(s: &[T], i: usize) -> T {
    let v = s[i];
    let mut left = v;
    for j in (0..i).rev() {
        if s[j] < v {
            break;
        }
        left = left.max(s[j]);
    }
    let mut right = v;
    for &x in &s[i + 1..] {
        if x < v {
            break;
        }
        right = right.max(x);
    }
    left.min(right) - v
}

/// Interpolated position where `s` rises back to `level` walking away from `i`.
fn crossing<T: Real>(f: &[T], s: &[T], i: usize, level: T, leftward: bool) -> Option<T> {
    let mut j = i;
    loop {
        let next = if leftward {
            j.checked_sub(1)?
        } else {
            if j + 1 >= s.len() {
                return None;
            }
            j + 1
        };
        if s[next] >= level {
            let w = (level - s[j]) / (s[next] - s[j]);
            return Some(f[j] + (f[next] - f[j]) * w);
        }
        j = next;
    }
}

fn detect_candidates<T: Real>(
    trace: &SpectrumTrace<T>,
    cfg: &DetectConfig<T>,
) -> Result<(Vec<Candidate<T>>, T), FitError> {
    cfg.validate()?;
    check_trace(trace)?;
    let n = trace.len();
    if n <= cfg.smooth_window {
        return Err(FitError::InsufficientData {
            needed: cfg.smooth_window + 1,
            got: n,
        });
    }
    let f = &trace.frequencies;
    let s = moving_average(&trace.signal, cfg.smooth_window);
    let baseline = estimate_baseline(&s);
    // noise minima in the smoothed trace must not pass for dips
    let noise = estimate_noise(&trace.signal) / T::from_usize_lossy(cfg.smooth_window).sqrt();
    let threshold = (cfg.min_prominence * baseline.abs()).max(T::lit(12.0) * noise);
    let span = f[n - 1] - f[0];

    let mut found = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if s[i] < s[i - 1] {
            // step over a flat bottom
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] > s[i] {
                let p = prominence(&s, i);
                if p >= threshold {
                    let depth = baseline - s[i];
                    let level = s[i] + depth * T::half();
                    let lo = crossing(f, &s, i, level, true);
                    let hi = crossing(f, &s, j, level, false);
                    let center = (f[i] + f[j]) * T::half();
                    let fwhm = match (lo, hi) {
                        (Some(a), Some(b)) => b - a,
                        (Some(a), None) => T::two() * (center - a),
                        (None, Some(b)) => T::two() * (b - center),
                        (None, None) => span / T::lit(4.0),
                    };
                    let step = span / T::from_usize_lossy(n - 1);
                    let contrast = if baseline > T::zero() {
                        (depth / baseline).max(T::lit(1e-4)).min(T::lit(0.95))
                    } else {
                        T::lit(0.01)
                    };
                    found.push(Candidate {
                        dip: DipSpec {
                            f0: center,
                            fwhm: fwhm.max(step),
                            contrast,
                        },
                        prominence: p,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    found.sort_by(|a, b| b.prominence.total_cmp_real(&a.prominence));
    found.truncate(cfg.max_dips);
    Ok((found, baseline))
}

/// Initial dip guesses from local minima of the smoothed trace, sorted by frequency.
///
/// Minima count when their prominence reaches `min_prominence` times the
/// estimated baseline and also stands clear of the noise estimated from the
/// trace itself. The most prominent `max_dips` are kept.
pub fn detect_dips<T: Real>(
    trace: &SpectrumTrace<T>,
    cfg: &DetectConfig<T>,
) -> Result<Vec<DipSpec<T>>, FitError> {
    let (found, _) = detect_candidates(trace, cfg)?;
    let mut dips: Vec<DipSpec<T>> = found.into_iter().map(|c| c.dip).collect();
    dips.sort_by(|a, b| a.f0.total_cmp_real(&b.f0));
    Ok(dips)
}

fn softplus<T: Real>(u: T) -> T {
    u.max(T::zero()) + (-u.abs()).exp().ln_1p()
}

fn softplus_inv<T: Real>(g: T) -> T {
    g + (-(-g).exp_m1()).ln()
}

fn logistic<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn logit<T: Real>(c: T) -> T {
    (c / (T::one() - c)).ln()
}

/// Residuals for the multi-Lorentzian model. Parameters are natural
/// `[b, f0, Γ, c, …]`; steps act on `[b, f0, softplus⁻¹(Γ), logit(c), …]`.
struct LorentzProblem<'a, T> {
    f: &'a [T],
    y: &'a [T],
    n_dips: usize,
}

impl<T: Real> LorentzProblem<'_, T> {
    fn dips(&self, p: &[T]) -> Vec<DipSpec<T>> {
        (0..self.n_dips)
            .map(|k| DipSpec {
                f0: p[1 + 3 * k],
                fwhm: p[2 + 3 * k],
                contrast: p[3 + 3 * k],
            })
            .collect()
    }

    fn natural_jacobian(&self, p: &[T], jac: &mut Matrix<T>) {
        let b = p[0];
        let dips = self.dips(p);
        for (i, &f) in self.f.iter().enumerate() {
            let row = jac.row_mut(i);
            let mut depth = T::zero();
            for (k, d) in dips.iter().enumerate() {
                let h = d.fwhm * T::half();
                let x = f - d.f0;
                let den = x * x + h * h;
                let l = h * h / den;
                depth += d.contrast * l;
                let bc = b * d.contrast;
                row[1 + 3 * k] = -bc * T::two() * x * h * h / (den * den);
                row[2 + 3 * k] = -bc * h * x * x / (den * den);
                row[3 + 3 * k] = -b * l;
            }
            row[0] = T::one() - depth;
        }
    }
}

impl<T: Real> LeastSquaresProblem<T> for LorentzProblem<'_, T> {
    fn n_params(&self) -> usize {
        3 * self.n_dips + 1
    }

    fn n_residuals(&self) -> usize {
        self.f.len()
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        let dips = self.dips(p);
        for ((o, &f), &y) in out.iter_mut().zip(self.f).zip(self.y) {
            *o = lorentzian_spectrum(&dips, p[0], f) - y;
        }
    }

    fn jacobian(&self, p: &[T], jac: &mut Matrix<T>) {
        self.natural_jacobian(p, jac);
        for k in 0..self.n_dips {
            let dg = -(-p[2 + 3 * k]).exp_m1();
            let c = p[3 + 3 * k];
            let dc = c * (T::one() - c);
            for i in 0..jac.rows() {
                let row = jac.row_mut(i);
                row[2 + 3 * k] *= dg;
                row[3 + 3 * k] *= dc;
            }
        }
    }

    fn retract(&self, p: &[T], step: &[T]) -> Vec<T> {
        let mut out = p.to_vec();
        out[0] += step[0];
        for k in 0..self.n_dips {
            out[1 + 3 * k] += step[1 + 3 * k];
            out[2 + 3 * k] = softplus(softplus_inv(p[2 + 3 * k]) + step[2 + 3 * k]);
            out[3 + 3 * k] = logistic(logit(p[3 + 3 * k]) + step[3 + 3 * k]);
        }
        out
    }
}

pub fn default_lm_options<T: Real>() -> LmOptions<T> {
    LmOptions::default()
}

/// Fits `baseline·(1 − Σ cᵢ Lᵢ(f))` by damped least squares from the given
/// starting point, with default solver options.
pub fn fit_lorentzians<T: Real>(
    trace: &SpectrumTrace<T>,
    init: &[DipSpec<T>],
    baseline_init: T,
) -> Result<FitResult<T>, FitError> {
    fit_lorentzians_with(trace, init, baseline_init, &LmOptions::default())
}

/// As [`fit_lorentzians`]; `opts.cost_floor` is raised to the rounding level of the data.
pub fn fit_lorentzians_with<T: Real>(
    trace: &SpectrumTrace<T>,
    init: &[DipSpec<T>],
    baseline_init: T,
    opts: &LmOptions<T>,
) -> Result<FitResult<T>, FitError> {
    if init.is_empty() {
        return Err(FitError::NoInitialDips);
    }
    check_trace(trace)?;
    let n_dips = init.len();
    let needed = 3 * (3 * n_dips + 1);
    if trace.len() < needed {
        return Err(FitError::InsufficientData {
            needed,
            got: trace.len(),
        });
    }
    if !baseline_init.is_finite() {
        return Err(FitError::InvalidConfig("baseline_init must be finite".into()));
    }
    let step = (trace.frequencies[trace.len() - 1] - trace.frequencies[0])
        / T::from_usize_lossy(trace.len() - 1);
    let mut x0 = vec![baseline_init];
    for d in init {
        if !d.f0.is_finite() || !d.fwhm.is_finite() || !d.contrast.is_finite() {
            return Err(FitError::InvalidConfig("initial dip has non-finite values".into()));
        }
        // keep the starting point strictly inside the transformed domain
        x0.push(d.f0);
        x0.push(if d.fwhm > T::zero() { d.fwhm } else { step });
        x0.push(d.contrast.max(T::lit(1e-6)).min(T::lit(0.999)));
    }

    let problem = LorentzProblem {
        f: &trace.frequencies,
        y: &trace.signal,
        n_dips,
    };
    let scale = trace.signal.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let mut o = *opts;
    o.cost_floor = o.cost_floor.max(rss_floor(trace.len(), scale));
    let rep = levenberg_marquardt(&problem, &x0, &o);

    let n = trace.len();
    let k = problem.n_params();
    let mut jac = Matrix::zeros(n, k);
    problem.natural_jacobian(&rep.params, &mut jac);
    let (jtj, _) = jac.normal_equations(&rep.residuals);
    let dof = if n > k { n - k } else { 1 };
    let s2 = rep.cost / T::from_usize_lossy(dof);
    let cov = match Cholesky::new(&jtj) {
        Some(ch) => {
            let mut inv = ch.inverse();
            for i in 0..k {
                for j in 0..k {
                    inv[(i, j)] *= s2;
                }
            }
            inv
        }
        None => {
            let mut m = Matrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    m[(i, j)] = T::nan();
                }
            }
            m
        }
    };

    // sort dips by center and carry the covariance blocks along
    let dips = problem.dips(&rep.params);
    let mut order: Vec<usize> = (0..n_dips).collect();
    order.sort_by(|&a, &b| dips[a].f0.total_cmp_real(&dips[b].f0));
    let index = |slot: usize| -> usize {
        if slot == 0 {
            0
        } else {
            let (d, r) = ((slot - 1) / 3, (slot - 1) % 3);
            1 + 3 * order[d] + r
        }
    };
    let mut covariance = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            covariance[(i, j)] = cov[(index(i), index(j))];
        }
    }

    Ok(FitResult {
        baseline: rep.params[0],
        dips: order.iter().map(|&i| dips[i]).collect(),
        covariance,
        rms_residual: (rep.cost / T::from_usize_lossy(n)).sqrt(),
        rss: rep.cost,
        n_points: n,
        converged: rep.converged,
        termination: rep.termination,
        iterations: rep.iterations,
        cost_history: rep.cost_history,
    })
}

/// Splits the deepest dip into two at `f0 ± Γ/8`, each with half the contrast.
fn split_deepest<T: Real>(dips: &mut Vec<DipSpec<T>>) {
    let Some((i, _)) = dips
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.contrast.total_cmp_real(&b.1.contrast))
    else {
        return;
    };
    let d = dips[i];
    let off = d.fwhm / T::lit(8.0);
    let half = d.contrast * T::half();
    dips[i] = DipSpec {
        f0: d.f0 - off,
        contrast: half,
        ..d
    };
    dips.insert(
        i + 1,
        DipSpec {
            f0: d.f0 + off,
            contrast: half,
            ..d
        },
    );
}

/// Starting dips for an `n`-dip fit: the `n` most prominent detections, with
/// the deepest split repeatedly when fewer were found.
pub fn initial_dips<T: Real>(
    trace: &SpectrumTrace<T>,
    n: usize,
    cfg: &DetectConfig<T>,
) -> Result<(Vec<DipSpec<T>>, T), FitError> {
    let (found, baseline) = detect_candidates(trace, cfg)?;
    let mut dips: Vec<DipSpec<T>> = found.iter().take(n).map(|c| c.dip).collect();
    if dips.is_empty() {
        // nothing stands out: seed at the lowest smoothed point
        let s = moving_average(&trace.signal, cfg.smooth_window);
        let (i, &lo) = s
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp_real(b.1))
            .expect("trace is nonempty");
        let span = trace.frequencies[trace.len() - 1] - trace.frequencies[0];
        let c = if baseline > T::zero() {
            ((baseline - lo) / baseline).max(T::lit(1e-3)).min(T::lit(0.5))
        } else {
            T::lit(1e-3)
        };
        dips.push(DipSpec {
            f0: trace.frequencies[i],
            fwhm: span / T::lit(10.0),
            contrast: c,
        });
    }
    while dips.len() < n {
        split_deepest(&mut dips);
    }
    dips.sort_by(|a, b| a.f0.total_cmp_real(&b.f0));
    Ok((dips, baseline))
}

#[derive(Debug, Clone)]
pub struct CandidateFit<T = f64> {
    pub n_dips: usize,
    pub fit: FitResult<T>,
    pub bic: T,
}

impl<T: Real> CandidateFit<T> {
    pub fn diagnostic(&self) -> CandidateDiagnostic {
        CandidateDiagnostic {
            n_dips: self.n_dips,
            converged: self.fit.converged,
            termination: self.fit.termination,
            iterations: self.fit.iterations,
            rms_residual: self.fit.rms_residual.as_f64(),
            bic: self.bic.as_f64(),
        }
    }
}

/// Fits every candidate dip count (in parallel), returned in the order given.
pub fn fit_candidates<T: Real>(
    trace: &SpectrumTrace<T>,
    candidate_counts: &[usize],
    cfg: &DetectConfig<T>,
) -> Result<Vec<CandidateFit<T>>, FitError> {
    fit_candidates_with(trace, candidate_counts, cfg, &LmOptions::default())
}

pub fn fit_candidates_with<T: Real>(
    trace: &SpectrumTrace<T>,
    candidate_counts: &[usize],
    cfg: &DetectConfig<T>,
    opts: &LmOptions<T>,
) -> Result<Vec<CandidateFit<T>>, FitError> {
    if candidate_counts.is_empty() || candidate_counts.contains(&0) {
        return Err(FitError::InvalidCandidates);
    }
    cfg.validate()?;
    candidate_counts
        .par_iter()
        .map(|&n| {
            let (init, baseline) = initial_dips(trace, n, cfg)?;
            let fit = fit_lorentzians_with(trace, &init, baseline, opts)?;
            let bic = fit.bic();
            Ok(CandidateFit { n_dips: n, fit, bic })
        })
        .collect()
}

/// Converged candidate with the lowest BIC; ties go to fewer dips.
pub fn best_candidate<T: Real>(fits: &[CandidateFit<T>]) -> Result<&CandidateFit<T>, FitError> {
    fits.iter()
        .filter(|c| c.fit.converged)
        .min_by(|a, b| a.bic.total_cmp_real(&b.bic).then(a.n_dips.cmp(&b.n_dips)))
        .ok_or_else(|| FitError::AllCandidatesFailed(fits.iter().map(|c| c.diagnostic()).collect()))
}

pub fn select_model<T: Real>(
    trace: &SpectrumTrace<T>,
    candidate_counts: &[usize],
) -> Result<FitResult<T>, FitError> {
    select_model_with(trace, candidate_counts, &DetectConfig::default())
}

pub fn select_model_with<T: Real>(
    trace: &SpectrumTrace<T>,
    candidate_counts: &[usize],
    cfg: &DetectConfig<T>,
) -> Result<FitResult<T>, FitError> {
    let fits = fit_candidates(trace, candidate_counts, cfg)?;
    Ok(best_candidate(&fits)?.fit.clone())
}
