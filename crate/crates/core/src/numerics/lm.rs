//! Levenberg–Marquardt damped least squares.
//!
//! Minimizes `½‖r(p)‖²` for a residual vector `r`. The damping term uses
//! Marquardt's diagonal scaling and the Nielsen update for the damping factor.
//! Residuals are expected to be pre-weighted (divided by their standard
//! deviations) so that the returned covariance is `(JᵀJ)⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A least-squares problem. Only `residuals` is mandatory; the Jacobian
/// defaults to central finite differences.
pub trait Problem {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        finite_difference_jacobian(|p| self.residuals(p), params)
    }

    /// Map a trial point back into the feasible box. Identity by default.
    fn project(&self, params: &mut DVector<f64>) {
        let _ = params;
    }
}

pub fn finite_difference_jacobian<F>(f: F, params: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let r0 = f(params);
    let mut jac = DMatrix::zeros(r0.len(), params.len());
    let mut p = params.clone();
    for j in 0..params.len() {
        let h = 6e-6 * params[j].abs().max(1e-3);
        let orig = p[j];
        p[j] = orig + h;
        let rp = f(&p);
        p[j] = orig - h;
        let rm = f(&p);
        p[j] = orig;
        let col = (rp - rm) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-14,
            xtol: 1e-12,
            gtol: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    SmallCostChange,
    SmallStep,
    SmallGradient,
    ZeroResidual,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// `½‖r‖²` at the solution.
    pub cost: f64,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LmReport {
    /// Sum of squared (weighted) residuals.
    pub fn chi_squared(&self) -> f64 {
        2.0 * self.cost
    }

    /// χ² per degree of freedom.
    pub fn reduced_chi_squared(&self) -> f64 {
        let dof = self.residuals.len().saturating_sub(self.params.len());
        if dof == 0 {
            f64::NAN
        } else {
            self.chi_squared() / dof as f64
        }
    }

    /// `(JᵀJ)⁻¹`, with a pseudo-inverse fallback for rank-deficient problems.
    pub fn covariance(&self) -> DMatrix<f64> {
        let jtj = self.jacobian.transpose() * &self.jacobian;
        match jtj.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => jtj
                .pseudo_inverse(1e-12)
                .unwrap_or_else(|_| DMatrix::from_element(self.params.len(), self.params.len(), f64::NAN)),
        }
    }

    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance().diagonal().map(|v| v.max(0.0).sqrt())
    }
}

pub fn minimize<P: Problem>(problem: &P, initial: DVector<f64>, opts: LmOptions) -> Result<LmReport> {
    let mut p = initial;
    problem.project(&mut p);
    let mut r = problem.residuals(&p);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite residuals at the initial point".into()));
    }
    let mut cost = 0.5 * r.norm_squared();
    let mut jac = problem.jacobian(&p);
    let n = p.len();

    let mut jtj = jac.transpose() * &jac;
    let mut grad = jac.transpose() * &r;
    let max_diag = jtj.diagonal().iter().cloned().fold(0.0f64, f64::max);
    let mut mu = opts.initial_damping * max_diag.max(1e-300);
    let mut nu = 2.0;

    for iter in 0..opts.max_iterations {
        if cost == 0.0 {
            return Ok(finish(p, cost, r, jac, iter, Termination::ZeroResidual));
        }
        // Coordinates held at a bound by `project` while the gradient pushes
        // outward are frozen for this iteration.
        let active = active_bounds(problem, &p, &grad);
        let free_grad = DVector::from_iterator(n, grad.iter().zip(&active).map(|(g, &a)| if a { 0.0 } else { *g }));
        if free_grad.amax() <= opts.gtol * (2.0 * cost).max(1e-300).sqrt() {
            return Ok(finish(p, cost, r, jac, iter, Termination::SmallGradient));
        }
        let mut a = jtj.clone();
        for i in 0..n {
            let d = jtj[(i, i)].max(1e-12 * max_diag.max(1e-300));
            a[(i, i)] += mu * d;
        }
        for (i, _) in active.iter().enumerate().filter(|(_, &a)| a) {
            a.row_mut(i).fill(0.0);
            a.column_mut(i).fill(0.0);
            a[(i, i)] = 1.0;
        }
        let step = match a.cholesky() {
            Some(ch) => ch.solve(&(-&free_grad)),
            None => {
                mu *= nu;
                nu *= 2.0;
                continue;
            }
        };
        let mut trial = &p + &step;
        problem.project(&mut trial);
        let actual_step = &trial - &p;
        // Per-component test: parameters can differ by many orders of magnitude.
        if actual_step
            .iter()
            .zip(p.iter())
            .all(|(s, v)| s.abs() <= opts.xtol * (v.abs() + opts.xtol))
        {
            return Ok(finish(p, cost, r, jac, iter, Termination::SmallStep));
        }
        let r_new = problem.residuals(&trial);
        let cost_new = 0.5 * r_new.norm_squared();
        let predicted = -(actual_step.dot(&grad) + 0.5 * actual_step.dot(&(&jtj * &actual_step)));
        let rho = if predicted > 0.0 && cost_new.is_finite() {
            (cost - cost_new) / predicted
        } else {
            -1.0
        };
        if rho > 0.0 {
            let rel_change = (cost - cost_new) / cost.max(1e-300);
            p = trial;
            r = r_new;
            cost = cost_new;
            jac = problem.jacobian(&p);
            jtj = jac.transpose() * &jac;
            grad = jac.transpose() * &r;
            mu *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            if rel_change <= opts.ftol {
                return Ok(finish(p, cost, r, jac, iter + 1, Termination::SmallCostChange));
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() {
                return Err(Error::Fit(format!("damping diverged after {iter} iterations")));
            }
        }
    }
    Err(Error::Fit(format!(
        "no convergence within {} iterations (cost {cost:.6e})",
        opts.max_iterations
    )))
}

fn active_bounds<P: Problem>(problem: &P, p: &DVector<f64>, grad: &DVector<f64>) -> Vec<bool> {
    let delta = p.map(|v| 1e-9 * (v.abs() + 1e-9));
    let mut probe = p - delta.component_mul(&grad.map(f64::signum));
    problem.project(&mut probe);
    (0..p.len())
        .map(|i| grad[i] != 0.0 && (probe[i] - p[i]).abs() < 0.5 * delta[i])
        .collect()
}

fn finish(
    params: DVector<f64>,
    cost: f64,
    residuals: DVector<f64>,
    jacobian: DMatrix<f64>,
    iterations: usize,
    termination: Termination,
) -> LmReport {
    LmReport {
        params,
        cost,
        residuals,
        jacobian,
        iterations,
        termination,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;
    impl Problem for Rosenbrock {
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]])
        }
    }

    struct ExpDecay {
        t: Vec<f64>,
        y: Vec<f64>,
    }
    impl Problem for ExpDecay {
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_iterator(
                self.t.len(),
                self.t
                    .iter()
                    .zip(&self.y)
                    .map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y),
            )
        }
    }

    /// Line `a·t + b` with `a` capped at 1 by projection.
    struct CappedSlope {
        t: Vec<f64>,
        y: Vec<f64>,
    }
    impl Problem for CappedSlope {
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_iterator(
                self.t.len(),
                self.t.iter().zip(&self.y).map(|(t, y)| p[0] * t + p[1] - y),
            )
        }
        fn project(&self, p: &mut DVector<f64>) {
            p[0] = p[0].min(1.0);
        }
    }

    #[test]
    fn converges_against_an_active_bound() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = t.iter().map(|t| 2.0 * t + 3.0).collect();
        let rep = minimize(
            &CappedSlope { t, y },
            DVector::from_vec(vec![0.0, 0.0]),
            LmOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.params[0], 1.0);
        // Best intercept for a slope fixed at 1: mean(y − t).
        assert!((rep.params[1] - 12.5).abs() < 1e-8, "{}", rep.params[1]);
    }

    #[test]
    fn solves_rosenbrock() {
        let rep = minimize(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), LmOptions::default()).unwrap();
        assert!((rep.params[0] - 1.0).abs() < 1e-8);
        assert!((rep.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn recovers_exponential() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y = t.iter().map(|t| 2.5 * (-1.3 * t).exp() + 0.4).collect();
        let prob = ExpDecay { t, y };
        let rep = minimize(&prob, DVector::from_vec(vec![1.0, 0.5, 0.0]), LmOptions::default()).unwrap();
        assert!((rep.params[0] - 2.5).abs() < 1e-8);
        assert!((rep.params[1] - 1.3).abs() < 1e-8);
        assert!((rep.params[2] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn covariance_of_linear_model_is_exact() {
        // y = a + b x with unit weights: covariance is (XᵀX)⁻¹.
        struct Line(Vec<f64>, Vec<f64>);
        impl Problem for Line {
            fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
                DVector::from_iterator(
                    self.0.len(),
                    self.0.iter().zip(&self.1).map(|(x, y)| p[0] + p[1] * x - y),
                )
            }
        }
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 3.1, 4.9, 7.0];
        let rep = minimize(&Line(x, y), DVector::from_vec(vec![0.0, 0.0]), LmOptions::default()).unwrap();
        let cov = rep.covariance();
        // XᵀX = [[4, 6], [6, 14]] → inverse = [[0.7, -0.3], [-0.3, 0.2]]
        assert!((cov[(0, 0)] - 0.7).abs() < 1e-6);
        assert!((cov[(0, 1)] + 0.3).abs() < 1e-6);
        assert!((cov[(1, 1)] - 0.2).abs() < 1e-6);
    }
}
