use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use super::{FitResult, FitWarning};
use crate::error::{invalid, Error, Result};
use crate::photophysics::OdmrSpectrum;
use crate::spin::{Pair, ZfsParams};

/// Starting values for one Lorentzian line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakGuess {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
}

/// Sum of unit-height Lorentzians plus a constant; parameters are
/// `[c_1, w_1, a_1, ..., c_n, w_n, a_n, baseline]`.
pub struct PeakProblem {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

impl PeakProblem {
    pub fn n_peaks(params: &DVector<f64>) -> usize {
        (params.len() - 1) / 3
    }

    pub fn model(freqs: &[f64], params: &DVector<f64>) -> Vec<f64> {
        let n = Self::n_peaks(params);
        let baseline = params[3 * n];
        freqs
            .iter()
            .map(|&f| {
                baseline
                    + (0..n)
                        .map(|k| {
                            let (c, w, a) = (params[3 * k], params[3 * k + 1], params[3 * k + 2]);
                            let h = 0.5 * w;
                            a * h * h / ((f - c).powi(2) + h * h)
                        })
                        .sum::<f64>()
            })
            .collect()
    }
}

impl LeastSquaresProblem for PeakProblem {
    fn residuals(&self, params: &DVector<f64>) -> Result<DVector<f64>> {
        let m = Self::model(&self.freqs, params);
        Ok(DVector::from_iterator(
            m.len(),
            m.iter().zip(&self.values).map(|(a, b)| a - b),
        ))
    }

    fn jacobian(&self, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = Self::n_peaks(params);
        let mut j = DMatrix::zeros(self.freqs.len(), params.len());
        for (i, &f) in self.freqs.iter().enumerate() {
            for k in 0..n {
                let (c, w, a) = (params[3 * k], params[3 * k + 1], params[3 * k + 2]);
                let h = 0.5 * w;
                let u = f - c;
                let d = u * u + h * h;
                let l = h * h / d;
                j[(i, 3 * k)] = a * 2.0 * u * h * h / (d * d);
                j[(i, 3 * k + 1)] = a * h * u * u / (d * d);
                j[(i, 3 * k + 2)] = l;
            }
            j[(i, 3 * n)] = 1.0;
        }
        Ok(j)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

fn auto_guess(freqs: &[f64], values: &[f64], n_peaks: usize) -> Vec<PeakGuess> {
    let base = median(values);
    let dev: Vec<f64> = values.iter().map(|v| v - base).collect();
    let step = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1).max(1) as f64;
    let mut taken = vec![false; freqs.len()];
    let mut out = Vec::new();
    for _ in 0..n_peaks {
        let best = (0..freqs.len())
            .filter(|&i| !taken[i])
            .max_by(|&a, &b| dev[a].abs().total_cmp(&dev[b].abs()));
        let Some(i) = best else { break };
        let half = 0.5 * dev[i].abs();
        let mut lo = i;
        while lo > 0 && dev[lo].abs() > half && dev[lo].signum() == dev[i].signum() {
            lo -= 1;
        }
        let mut hi = i;
        while hi + 1 < freqs.len() && dev[hi].abs() > half && dev[hi].signum() == dev[i].signum() {
            hi += 1;
        }
        let fwhm = (freqs[hi] - freqs[lo]).max(2.0 * step);
        out.push(PeakGuess {
            center: freqs[i],
            fwhm,
            amplitude: dev[i],
        });
        for (j, t) in taken.iter_mut().enumerate() {
            if (freqs[j] - freqs[i]).abs() <= 3.0 * fwhm {
                *t = true;
            }
        }
    }
    out.sort_by(|a, b| a.center.total_cmp(&b.center));
    out
}

/// Fits `n_peaks` Lorentzians plus a constant baseline.
///
/// Parameters are named `center_k`, `fwhm_k`, `amplitude_k` (k from 1, in
/// ascending center order) and `baseline`.
pub fn fit_peaks(spectrum: &OdmrSpectrum, n_peaks: usize, init: Option<&[PeakGuess]>) -> Result<FitResult> {
    spectrum.validate()?;
    if n_peaks == 0 {
        return Err(invalid("at least one peak is required"));
    }
    let freqs = spectrum.frequencies();
    let values = spectrum.contrast();
    if freqs.len() < 3 * n_peaks + 1 {
        return Err(Error::Underdetermined(format!(
            "{} samples cannot fix {n_peaks} peaks",
            freqs.len()
        )));
    }
    let guesses = match init {
        Some(g) if g.len() == n_peaks => g.to_vec(),
        Some(g) => {
            return Err(invalid(format!("{} initial guesses for {n_peaks} peaks", g.len())));
        }
        None => auto_guess(&freqs, &values, n_peaks),
    };
    if guesses.len() < n_peaks {
        return Err(Error::Underdetermined("spectrum has too few distinct features".into()));
    }
    let (f_lo, f_hi) = (freqs[0], freqs[freqs.len() - 1]);
    let span = f_hi - f_lo;
    let step = span / (freqs.len() - 1) as f64;
    let amp_scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);

    let n = 3 * n_peaks + 1;
    let mut p0 = DVector::zeros(n);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut scale = DVector::zeros(n);
    for (k, g) in guesses.iter().enumerate() {
        p0[3 * k] = g.center;
        p0[3 * k + 1] = g.fwhm;
        p0[3 * k + 2] = g.amplitude;
        lower[3 * k] = f_lo;
        upper[3 * k] = f_hi;
        lower[3 * k + 1] = 1e-3 * step;
        upper[3 * k + 1] = 2.0 * span;
        lower[3 * k + 2] = f64::NEG_INFINITY;
        upper[3 * k + 2] = f64::INFINITY;
        scale[3 * k] = g.center.abs().max(step);
        scale[3 * k + 1] = g.fwhm.abs().max(step);
        scale[3 * k + 2] = g.amplitude.abs().max(1e-3 * amp_scale);
    }
    p0[n - 1] = median(&values);
    lower[n - 1] = f64::NEG_INFINITY;
    upper[n - 1] = f64::INFINITY;
    scale[n - 1] = amp_scale;

    let problem = PeakProblem { freqs, values };
    let options = LmOptions {
        lower: Some(lower.clone()),
        upper: Some(upper.clone()),
        scale: Some(scale),
        ..LmOptions::default()
    };
    let out = levenberg_marquardt(&problem, p0, &options)?;
    let cov = out.covariance();

    // report peaks in ascending center order
    let mut order: Vec<usize> = (0..n_peaks).collect();
    order.sort_by(|&a, &b| out.params[3 * a].total_cmp(&out.params[3 * b]));
    let mut perm = Vec::with_capacity(n);
    for &k in &order {
        perm.extend([3 * k, 3 * k + 1, 3 * k + 2]);
    }
    perm.push(n - 1);
    let values: Vec<f64> = perm.iter().map(|&i| out.params[i]).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| cov[(perm[i], perm[j])]);
    let names: Vec<String> = (1..=n_peaks)
        .flat_map(|k| [format!("center_{k}"), format!("fwhm_{k}"), format!("amplitude_{k}")])
        .chain(["baseline".to_string()])
        .collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut result = FitResult::from_outcome(&name_refs, values, cov, &out);
    for k in 0..n_peaks {
        let w = out.params[3 * order[k] + 1];
        if w <= lower[3 * order[k] + 1] * (1.0 + 1e-9) || w >= upper[3 * order[k] + 1] * (1.0 - 1e-9) {
            result.warnings.push(FitWarning::AtBound(format!("fwhm_{}", k + 1)));
        }
        let name = format!("amplitude_{}", k + 1);
        let amp = result.get(&name).unwrap_or(0.0).abs();
        let se = result.std_error(&name).unwrap_or(f64::INFINITY);
        if amp <= (2.0 * se).max(1e-12 * amp_scale) {
            result
                .warnings
                .push(FitWarning::Unidentifiable(format!("line {} has no significant amplitude", k + 1)));
        }
    }
    Ok(result)
}

/// ZFS recovered from line positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZfsEstimate {
    pub zfs: ZfsParams,
    /// `|f_xy + f_yz - f_xz|` when all three lines are given, else 0.
    pub consistency_residual: f64,
}

/// Linear least squares for `(D, E)` from lines `2E` (Tx-Ty), `D-E` (Ty-Tz)
/// and `D+E` (Tx-Tz). Without explicit roles, lines are assigned by
/// ascending frequency in that order.
pub fn zfs_from_peaks(centers: &[f64], roles: Option<&[Pair]>) -> Result<ZfsEstimate> {
    if centers.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "{} line(s) cannot fix D and E",
            centers.len()
        )));
    }
    if centers.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(invalid("line positions must be finite and >= 0"));
    }
    let assigned: Vec<(Pair, f64)> = match roles {
        Some(r) => {
            if r.len() != centers.len() {
                return Err(invalid("one role per line is required"));
            }
            r.iter().copied().zip(centers.iter().copied()).collect()
        }
        None => {
            if centers.len() > 3 {
                return Err(invalid("at most three lines can be assigned by ordering"));
            }
            let mut sorted = centers.to_vec();
            sorted.sort_by(f64::total_cmp);
            [Pair::XY, Pair::YZ, Pair::XZ].into_iter().zip(sorted).collect()
        }
    };
    let row = |p: Pair| match p {
        Pair::XY => [0.0, 2.0],
        Pair::YZ => [1.0, -1.0],
        Pair::XZ => [1.0, 1.0],
    };
    let a = DMatrix::from_fn(assigned.len(), 2, |i, j| row(assigned[i].0)[j]);
    let b = DVector::from_iterator(assigned.len(), assigned.iter().map(|x| x.1));
    let ata = a.transpose() * &a;
    let sol = ata
        .clone()
        .lu()
        .solve(&(a.transpose() * &b))
        .filter(|_| ata.determinant().abs() > 1e-12)
        .ok_or_else(|| Error::Underdetermined("line roles do not separate D and E".into()))?;
    let get = |p: Pair| assigned.iter().find(|x| x.0 == p).map(|x| x.1);
    let consistency_residual = match (get(Pair::XY), get(Pair::YZ), get(Pair::XZ)) {
        (Some(xy), Some(yz), Some(xz)) => (xy + yz - xz).abs(),
        _ => 0.0,
    };
    Ok(ZfsEstimate {
        zfs: ZfsParams::new(sol[0], sol[1])?,
        consistency_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::jacobian_check;

    fn synthetic(params: &[f64], lo: f64, hi: f64, n: usize) -> OdmrSpectrum {
        let f: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let v = PeakProblem::model(&f, &DVector::from_column_slice(params));
        OdmrSpectrum::new(f.into_iter().zip(v).collect()).unwrap()
    }

    #[test]
    fn single_lorentzian_exact() {
        let s = synthetic(&[1432.0, 5.0, -0.01, 0.0], 1400.0, 1460.0, 241);
        let r = fit_peaks(&s, 1, None).unwrap();
        assert!(r.converged);
        assert!((r.get("center_1").unwrap() / 1432.0 - 1.0).abs() < 1e-6);
        assert!((r.get("fwhm_1").unwrap() / 5.0 - 1.0).abs() < 1e-6);
        assert!((r.get("amplitude_1").unwrap() / -0.01 - 1.0).abs() < 1e-6);
        r.validate().unwrap();
    }

    #[test]
    fn peak_jacobian_matches_differences() {
        let s = synthetic(&[918.0, 6.0, 0.02, 1432.0, 4.0, -0.01, 0.001], 880.0, 1480.0, 300);
        let prob = PeakProblem {
            freqs: s.frequencies(),
            values: s.contrast(),
        };
        let p = DVector::from_column_slice(&[920.0, 5.0, 0.015, 1430.0, 4.5, -0.012, 0.0005]);
        assert!(jacobian_check(&prob, &p, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn zero_field_lines_give_zfs() {
        let z = zfs_from_peaks(&[917.0, 1433.0, 2350.0], None).unwrap();
        assert!((z.zfs.d - 1891.5).abs() < 1e-9);
        assert!((z.zfs.e - 458.5).abs() < 1e-9);
        assert!(z.consistency_residual < 1e-9);
    }

    #[test]
    fn organic_host_lines() {
        let z = zfs_from_peaks(&[1350.0, 100.0, 1450.0], None).unwrap();
        assert!((z.zfs.d - 1400.0).abs() < 1e-9 && (z.zfs.e - 50.0).abs() < 1e-9);
        assert_eq!(z.consistency_residual, 0.0);
    }

    #[test]
    fn two_lines_with_roles() {
        let z = zfs_from_peaks(&[918.0, 1432.0], Some(&[Pair::XY, Pair::YZ])).unwrap();
        assert!((z.zfs.d - 1891.0).abs() < 1e-9 && (z.zfs.e - 459.0).abs() < 1e-9);
        assert!(matches!(zfs_from_peaks(&[918.0], None), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn residual_tracks_sum_rule_violation() {
        let z = zfs_from_peaks(&[917.0, 1433.0, 2352.5], None).unwrap();
        assert!((z.consistency_residual - 2.5).abs() < 1e-9);
    }
}
