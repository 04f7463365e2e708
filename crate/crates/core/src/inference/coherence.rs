use nalgebra::{DMatrix, DVector};

use super::lm::{levenberg_marquardt, FnProblem, LmOptions};
use super::{transform_covariance, FitResult, FitWarning};
use crate::coherent::CoherenceTrace;
use crate::error::{invalid, Error, Result};

/// Fixed sharpness of the log-space smooth minimum in the decoupling fit.
pub const CPMG_SHARPNESS: f64 = 3.0;

/// `A exp(-(t/T2)^n) + c`.
pub fn stretched_exponential(t: f64, amplitude: f64, t2: f64, exponent: f64, offset: f64) -> f64 {
    amplitude * (-(t / t2).powf(exponent)).exp() + offset
}

fn decay_jacobian(times: &[f64], p: &DVector<f64>) -> DMatrix<f64> {
    let (a, t2, n) = (p[0], p[1], p[2]);
    let mut j = DMatrix::zeros(times.len(), 4);
    for (i, &t) in times.iter().enumerate() {
        let x = t / t2;
        let y = if x > 0.0 { x.powf(n) } else { 0.0 };
        let e = (-y).exp();
        j[(i, 0)] = e;
        j[(i, 1)] = a * e * y * n / t2;
        j[(i, 2)] = if x > 0.0 { -a * e * y * x.ln() } else { 0.0 };
        j[(i, 3)] = 1.0;
    }
    j
}

/// Fits `A exp(-(t/T2)^n) + c` with `n` in `[0.5, 3]`; `T2` is the 1/e time
/// of the fitted envelope.
pub fn fit_decay(trace: &CoherenceTrace) -> Result<FitResult> {
    trace.validate()?;
    let times = trace.times();
    let values = trace.signal();
    if times.len() < 5 {
        return Err(Error::Underdetermined("a decay fit needs >= 5 samples".into()));
    }
    let span = times[times.len() - 1] - times[0];
    let first = values[0];
    let tail_len = (values.len() / 10).max(1);
    let tail = values[values.len() - tail_len..].iter().sum::<f64>() / tail_len as f64;
    let amplitude = first - tail;
    let decaying = amplitude.abs() > 1e-9 * first.abs().max(tail.abs()).max(1e-300);

    let level = tail + amplitude / std::f64::consts::E;
    let t2_guess = times
        .iter()
        .zip(&values)
        .find(|(_, v)| (**v - level) * amplitude.signum() <= 0.0)
        .map(|(t, _)| *t)
        .filter(|t| *t > 0.0)
        .unwrap_or(0.5 * span.max(f64::MIN_POSITIVE));

    let t_min = times.iter().copied().find(|t| *t > 0.0).unwrap_or(span) * 1e-3;
    let lower = DVector::from_vec(vec![f64::NEG_INFINITY, t_min.max(1e-12), 0.5, f64::NEG_INFINITY]);
    let upper = DVector::from_vec(vec![f64::INFINITY, 1e3 * span.max(1e-12), 3.0, f64::INFINITY]);
    let value_scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let options = LmOptions {
        scale: Some(DVector::from_vec(vec![
            amplitude.abs().max(1e-3 * value_scale),
            t2_guess,
            1.0,
            value_scale,
        ])),
        ..LmOptions::default().with_bounds(lower.clone(), upper.clone())
    };
    let problem = FnProblem {
        residuals: |p: &DVector<f64>| {
            Ok(DVector::from_iterator(
                times.len(),
                times
                    .iter()
                    .zip(&values)
                    .map(|(&t, &v)| stretched_exponential(t, p[0], p[1], p[2], p[3]) - v),
            ))
        },
        jacobian: |p: &DVector<f64>| Ok(decay_jacobian(&times, p)),
    };
    let p0 = DVector::from_vec(vec![amplitude, t2_guess, 1.0, tail]);
    let out = levenberg_marquardt(&problem, p0, &options)?;
    let values_out: Vec<f64> = out.params.iter().copied().collect();
    let mut result = FitResult::from_outcome(
        &["amplitude", "t2_us", "exponent", "offset"],
        values_out,
        out.covariance(),
        &out,
    );
    let names = ["amplitude", "t2_us", "exponent", "offset"];
    for k in 1..3 {
        let v = out.params[k];
        if v <= lower[k] * (1.0 + 1e-9) || v >= upper[k] * (1.0 - 1e-9) {
            result.warnings.push(FitWarning::AtBound(names[k].into()));
        }
    }
    let fitted_drop = out.params[0].abs();
    if !decaying || fitted_drop < 1e-6 * value_scale || out.params[1] >= upper[1] * (1.0 - 1e-9) {
        result.converged = false;
        result.message = "trace does not decay within the sampled window".into();
    }
    Ok(result)
}

/// Log-space smooth minimum of `T0 N^gamma` and `T_sat`.
pub fn cpmg_scaling_model(n: f64, t0: f64, gamma: f64, t_sat: f64) -> f64 {
    let a = t0.ln() + gamma * n.ln();
    let b = t_sat.ln();
    let k = CPMG_SHARPNESS;
    let m = a.min(b);
    (m - ((-k * (a - m)).exp() + (-k * (b - m)).exp()).ln() / k).exp()
}

/// Fits `T2(N) = smoothmin(T0 N^gamma, T_sat)` to `(N, T2)` points in log
/// space. Reports `t0_us`, `gamma`, `t_sat_us`.
pub fn fit_cpmg_scaling(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::Underdetermined(format!(
            "{} points cannot fix the scaling law; >= 4 required",
            points.len()
        )));
    }
    if points.iter().any(|(n, t)| !(*n >= 1.0) || !(*t > 0.0) || !n.is_finite() || !t.is_finite()) {
        return Err(invalid("points need N >= 1 and T2 > 0"));
    }
    let log_n: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let log_t: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let distinct = {
        let mut v = log_n.clone();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        v.len()
    };
    if distinct < 3 {
        return Err(Error::Underdetermined("need >= 3 distinct pulse counts".into()));
    }
    let t_max = log_t.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // initial power law from the lower half
    let half = (points.len() / 2).max(2);
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| log_n[a].total_cmp(&log_n[b]));
    let sel = &idx[..half];
    let mx = sel.iter().map(|&i| log_n[i]).sum::<f64>() / half as f64;
    let my = sel.iter().map(|&i| log_t[i]).sum::<f64>() / half as f64;
    let sxx: f64 = sel.iter().map(|&i| (log_n[i] - mx).powi(2)).sum();
    let sxy: f64 = sel.iter().map(|&i| (log_n[i] - mx) * (log_t[i] - my)).sum();
    let gamma0 = if sxx > 0.0 { (sxy / sxx).clamp(-0.5, 2.5) } else { 0.0 };
    let a0 = my - gamma0 * mx;

    let k = CPMG_SHARPNESS;
    let model = |p: &DVector<f64>, x: f64| {
        let a = p[0] + p[1] * x;
        let b = p[2];
        let m = a.min(b);
        let ea = (-k * (a - m)).exp();
        let eb = (-k * (b - m)).exp();
        let s = ea + eb;
        (m - s.ln() / k, ea / s, eb / s)
    };
    let problem = FnProblem {
        residuals: |p: &DVector<f64>| {
            Ok(DVector::from_iterator(
                log_n.len(),
                log_n.iter().zip(&log_t).map(|(&x, &y)| model(p, x).0 - y),
            ))
        },
        jacobian: |p: &DVector<f64>| {
            let mut j = DMatrix::zeros(log_n.len(), 3);
            for (i, &x) in log_n.iter().enumerate() {
                let (_, wa, wb) = model(p, x);
                j[(i, 0)] = wa;
                j[(i, 1)] = wa * x;
                j[(i, 2)] = wb;
            }
            Ok(j)
        },
    };
    let lower = DVector::from_vec(vec![f64::NEG_INFINITY, -1.0, f64::NEG_INFINITY]);
    let upper = DVector::from_vec(vec![f64::INFINITY, 3.0, t_max + 3.0f64 * 10f64.ln()]);
    let options = LmOptions {
        scale: Some(DVector::from_vec(vec![1.0, 1.0, 1.0])),
        ..LmOptions::default().with_bounds(lower, upper.clone())
    };
    let p0 = DVector::from_vec(vec![a0, gamma0, t_max + 0.5]);
    let out = levenberg_marquardt(&problem, p0, &options)?;
    let (la, g, ls) = (out.params[0], out.params[1], out.params[2]);
    let values = vec![la.exp(), g, ls.exp()];
    let jac = DMatrix::from_diagonal(&DVector::from_vec(vec![la.exp(), 1.0, ls.exp()]));
    let cov = transform_covariance(&out.covariance(), &jac);
    let mut result = FitResult::from_outcome(&["t0_us", "gamma", "t_sat_us"], values, cov, &out);
    if ls >= upper[2] - 1e-9 {
        result.warnings.push(FitWarning::Unidentifiable(
            "no saturation within the sampled pulse counts".into(),
        ));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(f: impl Fn(f64) -> f64, t_max: f64, n: usize) -> CoherenceTrace {
        CoherenceTrace::new(
            (0..n)
                .map(|i| {
                    let t = t_max * i as f64 / (n - 1) as f64;
                    (t, f(t))
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_stretched_exponential() {
        let tr = trace(|t| stretched_exponential(t, 1.0, 3.4, 1.3, 0.0), 15.0, 200);
        let r = fit_decay(&tr).unwrap();
        assert!(r.converged, "{}", r.message);
        assert!((r.get("t2_us").unwrap() / 3.4 - 1.0).abs() < 1e-6);
        assert!((r.get("exponent").unwrap() / 1.3 - 1.0).abs() < 1e-6);
        r.validate().unwrap();
    }

    #[test]
    fn flat_trace_is_not_converged() {
        let tr = trace(|_| 0.8, 10.0, 50);
        let r = fit_decay(&tr).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn power_law_and_plateau() {
        let pts: Vec<(f64, f64)> = (0..9)
            .map(|k| {
                let n = 2f64.powi(k);
                (n, cpmg_scaling_model(n, 40.0, 0.6, 350.0))
            })
            .collect();
        let r = fit_cpmg_scaling(&pts).unwrap();
        assert!((r.get("gamma").unwrap() - 0.6).abs() < 1e-6);
        assert!((r.get("t_sat_us").unwrap() / 350.0 - 1.0).abs() < 1e-6);
        assert!((r.get("t0_us").unwrap() / 40.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_points_give_zero_exponent() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&n| (n, 12.0)).collect();
        let r = fit_cpmg_scaling(&pts).unwrap();
        assert!(r.get("gamma").unwrap().abs() < 0.02);
        assert!(fit_cpmg_scaling(&pts[..3]).is_err());
    }
}
