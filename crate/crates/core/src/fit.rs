//! Levenberg–Marquardt nonlinear least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of the cost falls below this.
    pub ftol: f64,
    /// Stop when the relative step size falls below this.
    pub xtol: f64,
    pub initial_lambda: f64,
    /// Scale the covariance by the reduced chi-square (unknown absolute noise).
    pub scale_covariance: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            ftol: 1e-12,
            xtol: 1e-10,
            initial_lambda: 1e-3,
            scale_covariance: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Sum of squared residuals at the optimum.
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

impl FitResult {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.params.len())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

/// Central-difference Jacobian of `r` at `p`.
pub fn numeric_jacobian(
    r: &mut impl FnMut(&[f64]) -> Vec<f64>,
    p: &[f64],
    m: usize,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-7 * p[j].abs().max(1e-7);
        q[j] = p[j] + h;
        let up = r(&q);
        q[j] = p[j] - h;
        let down = r(&q);
        q[j] = p[j];
        for i in 0..m {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Minimize `Σ r_i(p)²` starting from `p0`.
///
/// Residuals should already be weighted (divided by σ). A residual vector
/// containing non-finite values is treated as an infeasible step.
pub fn levenberg_marquardt(
    mut residuals: impl FnMut(&[f64]) -> Vec<f64>,
    p0: &[f64],
    opts: LmOptions,
) -> Result<FitResult> {
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let m = r.len();
    if m < n {
        return Err(Error::Shape {
            expected: format!("at least {n} residuals"),
            found: m.to_string(),
        });
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(
            "residuals not finite at the starting point".into(),
        ));
    }
    let mut cost = sum_sq(&r);
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    let mut converged = cost == 0.0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let jac = numeric_jacobian(&mut residuals, &p, m);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
            let rt = residuals(&trial);
            let ct = if rt.iter().all(|x| x.is_finite()) {
                sum_sq(&rt)
            } else {
                f64::INFINITY
            };
            if ct <= cost {
                let step = delta.norm();
                let scale = DVector::from_column_slice(&p).norm();
                let rel_drop = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_drop < opts.ftol || step <= opts.xtol * (scale + opts.xtol) || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: we are at a (numerical) minimum.
            converged = true;
        }
    }
    if !converged {
        return Err(Error::FitConvergence {
            iterations,
            residual_norm: cost.sqrt(),
        });
    }
    let jac = numeric_jacobian(&mut residuals, &p, m);
    let jtj = jac.transpose() * &jac;
    let dof = m - n;
    let mut covariance = jtj
        .clone()
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-300).ok())
        .ok_or_else(|| Error::Degenerate("singular normal matrix".into()))?;
    if opts.scale_covariance && dof > 0 {
        covariance *= cost / dof as f64;
    }
    Ok(FitResult {
        params: p,
        covariance,
        chi2: cost,
        dof,
        iterations,
        residuals: r,
    })
}
