//! Bounded Levenberg–Marquardt least squares.
//!
//! Minimizes `½‖r(p)‖²` with Marquardt's diagonal scaling. Box bounds are
//! handled by projecting every trial point onto the feasible box. Standard
//! errors come from the pseudo-inverse of `JᵀJ` at the solution.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LsqError {
    #[error("not converged after {iterations} iterations (cost {cost:e})")]
    NotConverged { iterations: usize, cost: f64 },
    #[error("residuals are not finite at the initial point")]
    NonFiniteStart,
    #[error("more parameters ({params}) than residuals ({residuals})")]
    Underdetermined { params: usize, residuals: usize },
}

/// A least-squares problem: residual vector and, optionally, its Jacobian.
pub trait Problem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// Analytic Jacobian (row per residual). Returns `false` to request
    /// central finite differences instead.
    fn jacobian(&self, _p: &[f64], _jac: &mut DMatrix<f64>) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn project(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative parameter step below which the fit is converged.
    pub xtol: f64,
    /// Relative cost decrease below which the fit is converged.
    pub ftol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-10,
            ftol: 1e-14,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `½‖r‖²`
    pub cost: f64,
    pub iterations: usize,
    /// Pseudo-inverse of `JᵀJ` at the solution (unscaled by the residual variance).
    pub inv_normal: DMatrix<f64>,
}

impl LmReport {
    /// Degrees of freedom `m - n`.
    pub fn dof(&self) -> usize {
        self.residuals.len().saturating_sub(self.params.len())
    }

    /// Residual variance estimate `‖r‖²/(m-n)`.
    pub fn residual_variance(&self) -> f64 {
        let dof = self.dof().max(1);
        2.0 * self.cost / dof as f64
    }

    /// Standard errors scaled by the residual variance (unknown noise level).
    pub fn std_errors(&self) -> Vec<f64> {
        let s2 = self.residual_variance();
        (0..self.params.len())
            .map(|i| (self.inv_normal[(i, i)].max(0.0) * s2).sqrt())
            .collect()
    }

    /// Standard errors assuming unit-variance (already weighted) residuals.
    pub fn std_errors_absolute(&self) -> Vec<f64> {
        (0..self.params.len())
            .map(|i| self.inv_normal[(i, i)].max(0.0).sqrt())
            .collect()
    }

    pub fn rms(&self) -> f64 {
        (2.0 * self.cost / self.residuals.len().max(1) as f64).sqrt()
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn numeric_jacobian<P: Problem + ?Sized>(problem: &P, p: &[f64], bounds: &Bounds, jac: &mut DMatrix<f64>) {
    let m = problem.n_residuals();
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-6);
        let up = (p[j] + h).min(bounds.upper[j]);
        let lo = (p[j] - h).max(bounds.lower[j]);
        q[j] = up;
        problem.residuals(&q, &mut rp);
        q[j] = lo;
        problem.residuals(&q, &mut rm);
        q[j] = p[j];
        let d = up - lo;
        for i in 0..m {
            jac[(i, j)] = if d > 0.0 { (rp[i] - rm[i]) / d } else { 0.0 };
        }
    }
}

fn jacobian_at<P: Problem + ?Sized>(problem: &P, p: &[f64], bounds: &Bounds, jac: &mut DMatrix<f64>) {
    if !problem.jacobian(p, jac) {
        numeric_jacobian(problem, p, bounds, jac);
    }
}

fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-14 * n as f64;
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(n, n))
}

/// Runs the fit from `initial` (projected onto `bounds`).
pub fn levenberg_marquardt<P: Problem + ?Sized>(
    problem: &P,
    initial: &[f64],
    bounds: &Bounds,
    config: &LmConfig,
) -> Result<LmReport, LsqError> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    if n > m {
        return Err(LsqError::Underdetermined {
            params: n,
            residuals: m,
        });
    }
    let mut p = initial.to_vec();
    bounds.project(&mut p);
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(LsqError::NonFiniteStart);
    }
    let mut cost = cost_of(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut lambda = config.initial_lambda;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = cost == 0.0;

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        jacobian_at(problem, &p, bounds, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let mut g = jac.transpose() * rv;
        let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let diag: Vec<f64> = (0..n).map(|i| jtj[(i, i)].max(1e-15 * max_diag).max(1e-300)).collect();
        // parameters held at a bound by the descent direction are frozen
        let frozen: Vec<bool> = (0..n)
            .map(|i| (p[i] <= bounds.lower[i] && g[i] > 0.0) || (p[i] >= bounds.upper[i] && g[i] < 0.0))
            .collect();
        for i in (0..n).filter(|i| frozen[*i]) {
            g[i] = 0.0;
        }
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }

        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                if frozen[i] {
                    a.row_mut(i).fill(0.0);
                    a.column_mut(i).fill(0.0);
                    a[(i, i)] = 1.0;
                } else {
                    a[(i, i)] += lambda * diag[i];
                }
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e30 {
                        converged = true;
                        break;
                    }
                    continue;
                }
            };
            for i in 0..n {
                trial[i] = p[i] + step[i];
            }
            bounds.project(&mut trial);
            let small_step = (0..n).all(|i| {
                (trial[i] - p[i]).abs() <= config.xtol * (p[i].abs() + config.xtol)
            });
            problem.residuals(&trial, &mut r_trial);
            let trial_cost = if r_trial.iter().all(|v| v.is_finite()) {
                cost_of(&r_trial)
            } else {
                f64::INFINITY
            };
            if trial_cost < cost {
                let rel_decrease = (cost - trial_cost) / cost;
                p.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                if small_step || rel_decrease < config.ftol || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            if small_step {
                // no representable improvement left along this direction
                converged = true;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e30 {
                converged = true;
                break;
            }
        }
    }

    if !converged {
        return Err(LsqError::NotConverged { iterations, cost });
    }
    jacobian_at(problem, &p, bounds, &mut jac);
    let inv_normal = pseudo_inverse(&(jac.transpose() * &jac));
    Ok(LmReport {
        params: p,
        residuals: r,
        cost,
        iterations,
        inv_normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl Problem for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for i in 0..self.x.len() {
                out[i] = p[0] + p[1] * self.x[i] - self.y[i];
            }
        }
    }

    struct Rosenbrock;

    impl Problem for Rosenbrock {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            out[0] = 10.0 * (p[1] - p[0] * p[0]);
            out[1] = 1.0 - p[0];
        }
    }

    #[test]
    fn linear_fit_matches_closed_form() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v + if (*v as i32) % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let rep = levenberg_marquardt(&Line { x: x.clone(), y: y.clone() }, &[0.0, 0.0], &Bounds::unbounded(2), &LmConfig::default()).unwrap();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((rep.params[1] - slope).abs() < 1e-9);
        assert!((rep.params[0] - (my - slope * mx)).abs() < 1e-9);
        // closed-form slope standard error
        let s2 = rep.residual_variance();
        assert!((rep.std_errors()[1] - (s2 / sxx).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rosenbrock_minimum() {
        let rep = levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &Bounds::unbounded(2), &LmConfig::default()).unwrap();
        assert!((rep.params[0] - 1.0).abs() < 1e-8);
        assert!((rep.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bounds_are_respected() {
        let b = Bounds {
            lower: vec![f64::NEG_INFINITY, f64::NEG_INFINITY],
            upper: vec![0.5, f64::INFINITY],
        };
        let rep = levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &b, &LmConfig::default()).unwrap();
        assert!(rep.params[0] <= 0.5);
        assert!((rep.params[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let cfg = LmConfig {
            max_iterations: 2,
            ..Default::default()
        };
        let err = levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &Bounds::unbounded(2), &cfg).unwrap_err();
        assert!(matches!(err, LsqError::NotConverged { .. }));
    }
}
