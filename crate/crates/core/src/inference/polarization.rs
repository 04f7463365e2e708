use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, FnProblem, LmOptions};
use super::{transform_covariance, FitResult, FitWarning};
use crate::error::{invalid, Error, Result};

/// Class centers for in-plane dipole orientations, degrees.
pub const CLASS_CENTERS: [f64; 3] = [0.0, 60.0, 120.0];

/// Intensity versus analyzer angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationScan {
    /// `(angle deg, counts)`.
    pub samples: Vec<(f64, f64)>,
}

impl PolarizationScan {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        let s = Self { samples };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .samples
            .iter()
            .any(|(a, c)| !a.is_finite() || !(0.0..360.0).contains(a) || !c.is_finite() || *c < 0.0)
        {
            return Err(invalid("angles must lie in [0, 360) and counts be >= 0"));
        }
        Ok(())
    }
}

fn angular_coverage(angles: &[f64]) -> f64 {
    let mut a = angles.to_vec();
    a.sort_by(f64::total_cmp);
    a.dedup();
    if a.len() < 2 {
        return 0.0;
    }
    let gaps: Vec<f64> = a.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    a[a.len() - 1] - a[0] + sorted[sorted.len() / 2]
}

fn wrap(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Fits `I = A cos^2(theta - theta0) + C`; reports `theta0_deg` in
/// `[0, 180)`, `amplitude >= 0` and `offset`.
pub fn fit_polarization(scan: &PolarizationScan) -> Result<FitResult> {
    scan.validate()?;
    let n = scan.samples.len();
    if n < 8 {
        return Err(Error::Underdetermined(format!("{n} angles; >= 8 required")));
    }
    let angles: Vec<f64> = scan.samples.iter().map(|s| s.0).collect();
    if angular_coverage(&angles) < 180.0 - 1e-9 {
        return Err(Error::Underdetermined("angles must span >= 180 degrees".into()));
    }
    let counts: Vec<f64> = scan.samples.iter().map(|s| s.1).collect();
    let th: Vec<f64> = angles.iter().map(|a| a.to_radians()).collect();

    // I = a0 + a1 cos 2t + a2 sin 2t
    let basis = DMatrix::from_fn(n, 3, |i, k| match k {
        0 => 1.0,
        1 => (2.0 * th[i]).cos(),
        _ => (2.0 * th[i]).sin(),
    });
    let lin = basis
        .svd(true, true)
        .solve(&DVector::from_column_slice(&counts), 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let half_amp = lin[1].hypot(lin[2]);
    let theta0 = 0.5 * lin[2].atan2(lin[1]);
    let p0 = DVector::from_vec(vec![theta0, 2.0 * half_amp, lin[0] - half_amp]);

    let problem = FnProblem {
        residuals: |p: &DVector<f64>| {
            Ok(DVector::from_iterator(
                n,
                th.iter()
                    .zip(&counts)
                    .map(|(&t, &c)| p[1] * (t - p[0]).cos().powi(2) + p[2] - c),
            ))
        },
        jacobian: |p: &DVector<f64>| {
            let mut j = DMatrix::zeros(n, 3);
            for (i, &t) in th.iter().enumerate() {
                let d = t - p[0];
                j[(i, 0)] = p[1] * (2.0 * d).sin();
                j[(i, 1)] = d.cos().powi(2);
                j[(i, 2)] = 1.0;
            }
            Ok(j)
        },
    };
    let scale = counts.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let options = LmOptions {
        scale: Some(DVector::from_vec(vec![1.0, scale, scale])),
        ..LmOptions::default()
    };
    let out = levenberg_marquardt(&problem, p0, &options)?;
    let (mut t0, mut amp, mut offset) = (out.params[0], out.params[1], out.params[2]);
    if amp < 0.0 {
        // A cos^2(x) + C = -A cos^2(x + 90) + (A + C)
        t0 += std::f64::consts::FRAC_PI_2;
        offset += amp;
        amp = -amp;
    }
    let theta_deg = wrap(t0.to_degrees(), 180.0);
    let jac = DMatrix::from_diagonal(&DVector::from_vec(vec![180.0 / std::f64::consts::PI, 1.0, 1.0]));
    let cov = transform_covariance(&out.covariance(), &jac);
    let mut result = FitResult::from_outcome(
        &["theta0_deg", "amplitude", "offset"],
        vec![theta_deg, amp, offset],
        cov,
        &out,
    );
    if offset <= 0.0 && amp <= 0.0 || offset > 0.0 && amp / offset < 0.05 {
        result.warnings.push(FitWarning::Unpolarized);
    }
    Ok(result)
}

/// Nearest-class assignment of dipole angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Class index per input angle (0, 1, 2 for 0, 60, 120 deg).
    pub assignments: Vec<usize>,
    /// Inputs equidistant from two centers, resolved to the lower index.
    pub ties: Vec<bool>,
    pub counts: [usize; 3],
    /// Circular mean per class, degrees mod 180; `None` for empty classes.
    pub means: [Option<f64>; 3],
    /// Circular standard deviation per class, degrees.
    pub std_devs: [Option<f64>; 3],
    /// Mean offset of all angles folded modulo 60 degrees, in `[-30, 30)`.
    pub folded_mean: f64,
    pub folded_std: f64,
    /// Counts in 10-degree bins over `[0, 180)`.
    pub histogram: Vec<usize>,
}

fn circular_stats(offsets_deg: &[f64], period: f64) -> (f64, f64) {
    let k = 2.0 * std::f64::consts::PI / period;
    let (s, c) = offsets_deg
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + (k * a).sin(), c + (k * a).cos()));
    let n = offsets_deg.len() as f64;
    let r = (s.hypot(c) / n).min(1.0);
    let mean = s.atan2(c) / k;
    let std = (-2.0 * r.max(1e-300).ln()).sqrt() / k;
    (mean, std)
}

/// Assigns each angle (taken mod 180) to the nearest of 0, 60 and 120
/// degrees; exact ties go to the lower class and are flagged.
pub fn cluster_orientations(angles: &[f64]) -> Result<ClusterReport> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(invalid("angles must be finite"));
    }
    let folded: Vec<f64> = angles.iter().map(|a| wrap(*a, 180.0)).collect();
    let dist = |a: f64, c: f64| {
        let d = (a - c).rem_euclid(180.0);
        d.min(180.0 - d)
    };
    let mut assignments = Vec::with_capacity(folded.len());
    let mut ties = Vec::with_capacity(folded.len());
    for &a in &folded {
        let d: Vec<f64> = CLASS_CENTERS.iter().map(|&c| dist(a, c)).collect();
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hits: Vec<usize> = (0..3).filter(|&k| (d[k] - best).abs() < 1e-9).collect();
        assignments.push(hits[0]);
        ties.push(hits.len() > 1);
    }
    let mut counts = [0usize; 3];
    let mut means = [None; 3];
    let mut std_devs = [None; 3];
    for k in 0..3 {
        let offsets: Vec<f64> = folded
            .iter()
            .zip(&assignments)
            .filter(|(_, &c)| c == k)
            .map(|(&a, _)| (a - CLASS_CENTERS[k] + 90.0).rem_euclid(180.0) - 90.0)
            .collect();
        counts[k] = offsets.len();
        if !offsets.is_empty() {
            let (m, s) = circular_stats(&offsets, 180.0);
            means[k] = Some(wrap(CLASS_CENTERS[k] + m, 180.0));
            std_devs[k] = Some(s);
        }
    }
    let sixty: Vec<f64> = folded.iter().map(|a| (a + 30.0).rem_euclid(60.0) - 30.0).collect();
    let (folded_mean, folded_std) = if sixty.is_empty() {
        (0.0, 0.0)
    } else {
        circular_stats(&sixty, 60.0)
    };
    let mut histogram = vec![0usize; 18];
    for &a in &folded {
        histogram[((a / 10.0) as usize).min(17)] += 1;
    }
    Ok(ClusterReport {
        assignments,
        ties,
        counts,
        means,
        std_devs,
        folded_mean,
        folded_std,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(a: f64, t0: f64, c: f64) -> PolarizationScan {
        PolarizationScan::new(
            (0..36)
                .map(|i| {
                    let th = i as f64 * 10.0;
                    (th, a * (th - t0).to_radians().cos().powi(2) + c)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_malus() {
        let r = fit_polarization(&scan(1.0, 60.0, 0.1)).unwrap();
        assert!((r.get("theta0_deg").unwrap() - 60.0).abs() < 0.01);
        assert!((r.get("amplitude").unwrap() - 1.0).abs() < 1e-9);
        assert!((r.get("offset").unwrap() - 0.1).abs() < 1e-9);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn reports_modulo_180() {
        let r = fit_polarization(&scan(1.0, 150.0, 0.1)).unwrap();
        assert!((r.get("theta0_deg").unwrap() - 150.0).abs() < 0.01);
    }

    #[test]
    fn flat_scan_warns() {
        let r = fit_polarization(&scan(0.01, 30.0, 1.0)).unwrap();
        assert!(r.has_warning(|w| *w == FitWarning::Unpolarized));
    }

    #[test]
    fn narrow_scan_rejected() {
        let s = PolarizationScan::new((0..10).map(|i| (i as f64 * 5.0, 1.0)).collect()).unwrap();
        assert!(fit_polarization(&s).is_err());
        assert!(PolarizationScan::new(vec![(360.0, 1.0)]).is_err());
    }

    #[test]
    fn nearest_class() {
        let r = cluster_orientations(&[1.0, 59.0, 61.0, 119.0]).unwrap();
        assert_eq!(r.assignments, vec![0, 1, 1, 2]);
        assert!(r.ties.iter().all(|t| !t));
        let t = cluster_orientations(&[30.0, 150.0]).unwrap();
        assert_eq!(t.assignments, vec![0, 0]);
        assert_eq!(t.ties, vec![true, true]);
    }

    #[test]
    fn class_statistics() {
        let r = cluster_orientations(&[178.0, 2.0, 58.0, 62.0]).unwrap();
        assert_eq!(r.counts, [2, 2, 0]);
        assert!(r.means[0].unwrap().min(180.0 - r.means[0].unwrap()) < 1e-9);
        assert!((r.means[1].unwrap() - 60.0).abs() < 1e-9);
        assert!(r.means[2].is_none());
        assert!((r.std_devs[1].unwrap() - 2.0).abs() < 0.01);
    }
}
