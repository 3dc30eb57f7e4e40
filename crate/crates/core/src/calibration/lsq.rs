//! Box-constrained nonlinear least squares.
//!
//! Levenberg-Marquardt on the free variables with trial points projected onto
//! the box. A variable sitting on a bound whose gradient points out of the box
//! is frozen for that iteration. The Jacobian is built from forward
//! differences, stepping inward at the upper bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresOptions {
    /// Budget of residual evaluations, Jacobian columns included.
    pub max_evals: usize,
    /// Stop once the sum of squares falls below this.
    pub cost_tol: f64,
    /// Stop when an accepted step reduces the cost by less than this fraction.
    pub rel_reduction_tol: f64,
    /// Stop when the projected gradient's infinity norm falls below this.
    pub gradient_tol: f64,
    /// Stop when a step is shorter than this times `1 + |x|`.
    pub step_tol: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
}

impl Default for LeastSquaresOptions {
    fn default() -> Self {
        Self {
            max_evals: 5000,
            cost_tol: 1e-28,
            rel_reduction_tol: 1e-14,
            gradient_tol: 1e-14,
            step_tol: 1e-13,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresOutcome {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    /// Sum of squared residuals at the (projected) starting point.
    pub initial_cost: f64,
    pub evals: usize,
    pub iterations: usize,
    /// A stopping test was met before the evaluation budget ran out.
    pub converged: bool,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimises `sum_i r_i(x)^2` over `lo <= x <= hi` from `x0`.
pub fn least_squares_box<F>(
    residual: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    options: &LeastSquaresOptions,
) -> Result<LeastSquaresOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if n == 0 || lo.len() != n || hi.len() != n {
        return Err(Error::invalid("start and bounds must be non-empty and of equal length"));
    }
    if let Some(j) = (0..n).find(|&j| !(lo[j] <= hi[j]) || !lo[j].is_finite() || !hi[j].is_finite()) {
        return Err(Error::invalid(format!(
            "infeasible bounds [{}, {}] for variable {j}",
            lo[j], hi[j]
        )));
    }
    let mut x: Vec<f64> = (0..n).map(|j| x0[j].clamp(lo[j], hi[j])).collect();
    let mut r = residual(&x)?;
    let mut evals = 1;
    let mut cost = sum_sq(&r);
    let initial_cost = cost;
    let m = r.len();
    let fixed: Vec<bool> = (0..n).map(|j| lo[j] == hi[j]).collect();

    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    'outer: while evals < options.max_evals {
        if cost <= options.cost_tol || fixed.iter().all(|&f| f) {
            converged = true;
            break;
        }
        iterations += 1;

        // Forward-difference Jacobian, column-major m x n.
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in (0..n).filter(|&j| !fixed[j]) {
            let mut h = options.fd_step * x[j].abs().max(1.0);
            if x[j] + h > hi[j] {
                h = -h;
            }
            let mut xp = x.clone();
            xp[j] += h;
            let rp = residual(&xp)?;
            evals += 1;
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        let jtj = jac.transpose() * &jac;

        let free: Vec<usize> = (0..n)
            .filter(|&j| !fixed[j] && !((x[j] <= lo[j] && grad[j] > 0.0) || (x[j] >= hi[j] && grad[j] < 0.0)))
            .collect();
        let projected_gradient = (0..n)
            .map(|j| (x[j] - (x[j] - grad[j]).clamp(lo[j], hi[j])).abs())
            .fold(0.0, f64::max);
        if free.is_empty() || projected_gradient <= options.gradient_tol {
            converged = true;
            break;
        }

        let k = free.len();
        let scale: Vec<f64> = free.iter().map(|&j| jtj[(j, j)].max(1e-12)).collect();
        loop {
            if evals >= options.max_evals {
                break 'outer;
            }
            let mut a = DMatrix::<f64>::zeros(k, k);
            let mut b = DVector::<f64>::zeros(k);
            for (p, &jp) in free.iter().enumerate() {
                b[p] = -grad[jp];
                for (q, &jq) in free.iter().enumerate() {
                    a[(p, q)] = jtj[(jp, jq)];
                }
                a[(p, p)] += lambda * scale[p];
            }
            let step = match a.cholesky() {
                Some(chol) => chol.solve(&b),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        converged = true;
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut trial = x.clone();
            for (p, &j) in free.iter().enumerate() {
                trial[j] = (x[j] + step[p]).clamp(lo[j], hi[j]);
            }
            let moved = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let size = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if moved <= options.step_tol * (1.0 + size) {
                converged = true;
                break 'outer;
            }
            let r_trial = residual(&trial)?;
            evals += 1;
            let cost_trial = sum_sq(&r_trial);
            if cost_trial < cost {
                let reduction = (cost - cost_trial) / cost;
                x = trial;
                r = r_trial;
                cost = cost_trial;
                lambda = (lambda / 3.0).max(1e-12);
                if reduction < options.rel_reduction_tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e20 {
                converged = true;
                break 'outer;
            }
        }
    }

    Ok(LeastSquaresOutcome {
        x,
        residuals: r,
        cost,
        initial_cost,
        evals,
        iterations,
        converged,
    })
}
