use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Residual vector and Jacobian of a least-squares objective.
pub trait LeastSquaresProblem {
    fn residuals(&self, params: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, params: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step length below which the fit is declared converged.
    pub step_tol: f64,
    /// Infinity norm of the scaled gradient below which the fit is converged.
    pub grad_tol: f64,
    pub lower: Option<DVector<f64>>,
    pub upper: Option<DVector<f64>>,
    /// Characteristic magnitude of each parameter; defaults to the initial
    /// values (or 1 where those vanish).
    pub scale: Option<DVector<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tol: 1e-8,
            grad_tol: 1e-10,
            lower: None,
            upper: None,
            scale: None,
        }
    }
}

impl LmOptions {
    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

impl LmOutcome {
    pub fn residual_norm(&self) -> f64 {
        self.residuals.norm()
    }

    /// `s^2 (J^T J)^+` with `s^2 = |r|^2 / (m - n)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.residuals.len();
        let n = self.params.len();
        let dof = m.saturating_sub(n).max(1) as f64;
        let s2 = self.residuals.norm_squared() / dof;
        pseudo_inverse_psd(&(self.jacobian.transpose() * &self.jacobian)) * s2
    }
}

/// Moore-Penrose inverse of a symmetric PSD matrix, itself PSD.
pub fn pseudo_inverse_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = max * 1e-14 * n as f64;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > floor {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / lambda;
        }
    }
    out
}

fn clamp(p: &mut DVector<f64>, options: &LmOptions) {
    if let Some(lo) = &options.lower {
        p.zip_apply(lo, |x, l| *x = x.max(l));
    }
    if let Some(hi) = &options.upper {
        p.zip_apply(hi, |x, h| *x = x.min(h));
    }
}

fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

/// Levenberg-Marquardt with gain-ratio damping updates and projection onto
/// box bounds.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: DVector<f64>,
    options: &LmOptions,
) -> Result<LmOutcome> {
    let n = initial.len();
    if n == 0 {
        return Err(invalid("no free parameters"));
    }
    for b in [&options.lower, &options.upper].into_iter().flatten() {
        if b.len() != n {
            return Err(invalid("bound vector length mismatch"));
        }
    }
    let scale = match &options.scale {
        Some(s) if s.len() == n => s.map(|v| if v.abs() > 0.0 { v.abs() } else { 1.0 }),
        Some(_) => return Err(invalid("scale vector length mismatch")),
        None => initial.map(|v| if v.abs() > 0.0 { v.abs() } else { 1.0 }),
    };

    let mut p = initial;
    clamp(&mut p, options);
    let mut r = problem.residuals(&p)?;
    check_finite(&r, "residuals")?;
    if r.len() < n {
        return Err(Error::Underdetermined(format!(
            "{} residuals for {n} parameters",
            r.len()
        )));
    }
    let mut cost = r.norm_squared();
    let mut j = problem.jacobian(&p)?;
    let mut lambda: Option<f64> = None;
    let mut nu = 2.0;

    let mut iterations = 0;
    let mut converged = false;
    let mut message = String::from("iteration limit reached");

    while iterations < options.max_iterations {
        iterations += 1;
        // scaled variables x = p / scale
        let js = &j * DMatrix::from_diagonal(&scale);
        let g = js.transpose() * &r;
        if g.amax() < options.grad_tol {
            converged = true;
            message = "gradient below tolerance".into();
            break;
        }
        let a = js.transpose() * &js;
        let diag = a.diagonal().map(|d| d.max(1e-12 * a.diagonal().amax().max(1e-300)));
        let mu = *lambda.get_or_insert(1e-3 * diag.amax());

        let mut damped = a.clone();
        for k in 0..n {
            damped[(k, k)] += mu * diag[k];
        }
        let step = match damped.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                lambda = Some(mu * nu);
                nu *= 2.0;
                continue;
            }
        };
        let mut candidate = &p + step.component_mul(&scale);
        clamp(&mut candidate, options);
        let actual_step = &candidate - &p;
        let scaled_step = actual_step.component_div(&scale);

        let r_new = problem.residuals(&candidate)?;
        let cost_new = if r_new.iter().all(|x| x.is_finite()) {
            r_new.norm_squared()
        } else {
            f64::INFINITY
        };
        // predicted reduction of the linear model
        let predicted = cost - (&r + &js * &scaled_step).norm_squared();
        let rho = if predicted > 0.0 {
            (cost - cost_new) / predicted
        } else {
            -1.0
        };

        let rel_step = scaled_step.norm() / (p.component_div(&scale).norm() + options.step_tol);
        if rho > 0.0 {
            p = candidate;
            r = r_new;
            cost = cost_new;
            j = problem.jacobian(&p)?;
            lambda = Some(mu * (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3)));
            nu = 2.0;
            if rel_step < options.step_tol {
                converged = true;
                message = "relative step below tolerance".into();
                break;
            }
        } else {
            if rel_step < options.step_tol * 1e-3 || !mu.is_finite() || mu > 1e300 {
                converged = cost.is_finite();
                message = "no further reduction possible".into();
                break;
            }
            lambda = Some(mu * nu);
            nu *= 2.0;
        }
    }
    Ok(LmOutcome {
        params: p,
        residuals: r,
        jacobian: j,
        iterations,
        converged,
        message,
    })
}

/// Largest deviation between the problem's Jacobian and five-point central
/// differences with step `h * max(|p_i|, 1)`, relative to each column's
/// largest entry.
pub fn jacobian_check<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    params: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let analytic = problem.jacobian(params)?;
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let step = h * params[k].abs().max(1.0);
        let shifted = |m: f64| {
            let mut q = params.clone();
            q[k] += m * step;
            problem.residuals(&q)
        };
        let near = shifted(1.0)? - shifted(-1.0)?;
        let far = shifted(2.0)? - shifted(-2.0)?;
        let fd = (near * 8.0 - far) / (12.0 * step);
        let col = analytic.column(k);
        let norm = fd.amax().max(col.amax());
        if norm == 0.0 {
            continue;
        }
        worst = worst.max((col - &fd).amax() / norm);
    }
    Ok(worst)
}

/// Adapts a pair of closures to [`LeastSquaresProblem`].
pub struct FnProblem<R, J> {
    pub residuals: R,
    pub jacobian: J,
}

impl<R, J> LeastSquaresProblem for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    fn residuals(&self, params: &DVector<f64>) -> Result<DVector<f64>> {
        (self.residuals)(params)
    }

    fn jacobian(&self, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        (self.jacobian)(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock() -> impl LeastSquaresProblem {
        FnProblem {
            residuals: |p: &DVector<f64>| Ok(DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]])),
            jacobian: |p: &DVector<f64>| {
                Ok(DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0]))
            },
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let out = levenberg_marquardt(&rosenbrock(), DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default())
            .unwrap();
        assert!(out.converged, "{}", out.message);
        assert!((out.params[0] - 1.0).abs() < 1e-8);
        assert!((out.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn quadratic_jacobian_is_exact() {
        let q = FnProblem {
            residuals: |p: &DVector<f64>| Ok(DVector::from_vec(vec![p[0] * p[0] - 2.0 * p[1], 3.0 * p[1]])),
            jacobian: |p: &DVector<f64>| Ok(DMatrix::from_row_slice(2, 2, &[2.0 * p[0], -2.0, 0.0, 3.0])),
        };
        let dev = jacobian_check(&q, &DVector::from_vec(vec![0.7, -1.3]), 1e-4).unwrap();
        assert!(dev < 1e-9, "{dev}");
    }

    #[test]
    fn respects_bounds() {
        let opts = LmOptions::default().with_bounds(
            DVector::from_vec(vec![-5.0, -5.0]),
            DVector::from_vec(vec![0.5, 5.0]),
        );
        let out = levenberg_marquardt(&rosenbrock(), DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert!(out.params[0] <= 0.5);
        assert!((out.params[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn pseudo_inverse_is_psd() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pseudo_inverse_psd(&a);
        assert!((p[(0, 0)] - 0.25).abs() < 1e-12);
        let ev = SymmetricEigen::new(p).eigenvalues;
        assert!(ev.iter().all(|v| *v >= -1e-12));
    }
}
