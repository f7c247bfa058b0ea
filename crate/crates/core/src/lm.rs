//! Levenberg–Marquardt damped least squares.
//!
//! Problems supply residuals, a Jacobian with respect to local step
//! coordinates, and a retraction that applies a step. Keeping the parameters in
//! their natural form and only mapping steps lets bounded parameters use smooth
//! transforms without round-tripping the starting point.

use crate::linalg::{Cholesky, Matrix};
use crate::num::Real;

pub trait LeastSquaresProblem<T: Real> {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// `model(params) − data`.
    fn residuals(&self, params: &[T], out: &mut [T]);
    /// Jacobian of the residuals with respect to the step coordinates at `params`.
    fn jacobian(&self, params: &[T], jac: &mut Matrix<T>);
    /// Applies `step` (in step coordinates) to `params`.
    fn retract(&self, params: &[T], step: &[T]) -> Vec<T> {
        params.iter().zip(step).map(|(&p, &s)| p + s).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions<T> {
    pub max_iterations: usize,
    pub initial_lambda: T,
    pub lambda_up: T,
    pub lambda_down: T,
    pub max_lambda: T,
    /// Relative cost decrease below which an accepted step ends the run.
    pub ftol: T,
    /// Bound on `max |gᵢ| / (√(JᵀJ)ᵢᵢ · ‖r‖)`, the cosine between the residual
    /// and each Jacobian column.
    pub gtol: T,
    /// Sum of squares at or below which the fit is exact to working precision.
    pub cost_floor: T,
}

impl<T: Real> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_lambda: T::lit(1e-3),
            lambda_up: T::lit(10.0),
            lambda_down: T::lit(10.0),
            max_lambda: T::lit(1e16),
            ftol: T::lit(1e-10),
            gtol: T::lit(1e-8),
            cost_floor: T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    CostChange,
    CostFloor,
    /// Damping grew past `max_lambda` without finding a descent step.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport<T> {
    pub params: Vec<T>,
    pub residuals: Vec<T>,
    /// Sum of squared residuals.
    pub cost: T,
    /// Cost after the start and after every accepted step.
    pub cost_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

fn sum_sq<T: Real>(r: &[T]) -> T {
    r.iter().map(|&v| v * v).sum()
}

pub fn levenberg_marquardt<T, P>(problem: &P, x0: &[T], opts: &LmOptions<T>) -> LmReport<T>
where
    T: Real,
    P: LeastSquaresProblem<T> + ?Sized,
{
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut params = x0.to_vec();
    let mut r = vec![T::zero(); m];
    problem.residuals(&params, &mut r);
    let mut cost = sum_sq(&r);
    let mut history = vec![cost];
    let mut lambda = opts.initial_lambda;
    let mut jac = Matrix::zeros(m, n);
    let mut r_trial = vec![T::zero(); m];
    let mut iterations = 0;

    let termination = 'outer: loop {
        if cost <= opts.cost_floor {
            break Termination::CostFloor;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        problem.jacobian(&params, &mut jac);
        let (jtj, g) = jac.normal_equations(&r);

        let rnorm = cost.sqrt();
        let mut gmax = T::zero();
        for i in 0..n {
            let d = jtj[(i, i)];
            if d > T::zero() {
                gmax = gmax.max(g[i].abs() / (d.sqrt() * rnorm));
            }
        }
        if gmax <= opts.gtol {
            break Termination::Gradient;
        }
        iterations += 1;

        let dmax = (0..n).map(|i| jtj[(i, i)]).fold(T::zero(), T::max);
        let dfloor = if dmax > T::zero() {
            dmax * T::lit(1e-12)
        } else {
            T::one()
        };
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(dfloor);
            }
            let Some(ch) = Cholesky::new(&a) else {
                lambda *= opts.lambda_up;
                if lambda > opts.max_lambda {
                    break 'outer Termination::Stalled;
                }
                continue;
            };
            let step: Vec<T> = ch.solve(&g).into_iter().map(|v| -v).collect();
            let trial = problem.retract(&params, &step);
            problem.residuals(&trial, &mut r_trial);
            let trial_cost = sum_sq(&r_trial);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                params = trial;
                std::mem::swap(&mut r, &mut r_trial);
                cost = trial_cost;
                history.push(cost);
                lambda = (lambda / opts.lambda_down).max(T::lit(1e-12));
                if rel < opts.ftol {
                    break 'outer Termination::CostChange;
                }
                break;
            }
            lambda *= opts.lambda_up;
            if lambda > opts.max_lambda {
                break 'outer Termination::Stalled;
            }
        }
    };

    let converged = matches!(
        termination,
        Termination::Gradient | Termination::CostChange | Termination::CostFloor
    );
    LmReport {
        params,
        residuals: r,
        cost,
        cost_history: history,
        iterations,
        converged,
        termination,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = a·exp(b·x)
    struct Exp {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem<f64> for Exp {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for (i, (&x, &y)) in self.x.iter().zip(&self.y).enumerate() {
                out[i] = p[0] * (p[1] * x).exp() - y;
            }
        }
        fn jacobian(&self, p: &[f64], jac: &mut Matrix<f64>) {
            for (i, &x) in self.x.iter().enumerate() {
                let e = (p[1] * x).exp();
                jac.row_mut(i).copy_from_slice(&[e, p[0] * x * e]);
            }
        }
    }

    #[test]
    fn fits_exponential() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y = x.iter().map(|v| 2.5 * (-1.3 * v).exp()).collect();
        let prob = Exp { x, y };
        let rep = levenberg_marquardt(&prob, &[1.0, 0.0], &LmOptions::default());
        assert!(rep.converged, "{:?}", rep.termination);
        assert!((rep.params[0] - 2.5).abs() < 1e-8);
        assert!((rep.params[1] + 1.3).abs() < 1e-8);
        assert!(rep.cost_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn starting_at_optimum_needs_no_iterations() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = x.iter().map(|v| 2.0 * (0.1 * v).exp()).collect();
        let prob = Exp { x, y };
        let rep = levenberg_marquardt(&prob, &[2.0, 0.1], &LmOptions::default());
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.cost, 0.0);
    }

    #[test]
    fn degenerate_jacobian_does_not_crash() {
        // a = 0 makes the b column vanish
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = vec![1.0; 10];
        let prob = Exp { x, y };
        let rep = levenberg_marquardt(&prob, &[0.0, 0.5], &LmOptions::default());
        assert!(rep.cost.is_finite());
        assert!(rep.cost < 10.0);
    }
}
