use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::lm::LmOutcome;
use super::{FitResult, FitWarning};
use crate::coherent::CoherenceTrace;
use crate::error::{invalid, Error, Result};

const PAD_FACTOR: usize = 16;
const MIN_REVIVALS: f64 = 2.0;

/// Dominant modulation frequency (MHz) of a uniformly sampled trace, from
/// the Hann-windowed, zero-padded spectrum with quadratic peak
/// interpolation. Frequencies completing fewer than two periods over the
/// trace are ignored.
pub fn modulation_frequency(trace: &CoherenceTrace) -> Result<f64> {
    trace.validate()?;
    let t = trace.times();
    let y = trace.signal();
    let n = t.len();
    if n < 8 {
        return Err(invalid("a modulation analysis needs >= 8 samples"));
    }
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(invalid("trace must be uniformly sampled"));
    }
    let span = dt * n as f64;
    let mean = y.iter().sum::<f64>() / n as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread < 1e-12 {
        return Err(Error::NoModulation("trace is flat".into()));
    }
    // remove the slow envelope with a least-squares quadratic
    let tc: Vec<f64> = t.iter().map(|v| (v - t[0]) / span - 0.5).collect();
    let basis = DMatrix::from_fn(n, 3, |i, k| tc[i].powi(k as i32));
    let coeffs = basis
        .clone()
        .svd(true, true)
        .solve(&DVector::from_column_slice(&y), 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let trend = &basis * coeffs;

    let len = (n * PAD_FACTOR).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for i in 0..n {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
        buf[i] = Complex64::new((y[i] - trend[i]) * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let mag: Vec<f64> = buf[..len / 2].iter().map(|z| z.norm()).collect();
    let df = 1.0 / (len as f64 * dt);
    let k_min = ((MIN_REVIVALS / span) / df).ceil() as usize;
    if k_min + 2 >= mag.len() {
        return Err(Error::NoModulation("trace too short for two periods".into()));
    }
    let k = (k_min.max(1)..mag.len() - 1)
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
        .ok_or_else(|| Error::NoModulation("empty spectrum".into()))?;
    let floor = mag[k_min.max(1)..].iter().sum::<f64>() / (mag.len() - k_min.max(1)) as f64;
    if mag[k] <= 1e-12 * spread * n as f64 || mag[k] < 3.0 * floor {
        return Err(Error::NoModulation("no spectral line above the floor".into()));
    }
    if k == k_min.max(1) {
        return Err(Error::NoModulation("dominant component has fewer than two periods".into()));
    }
    let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Ok((k as f64 + shift.clamp(-0.5, 0.5)) * df)
}

/// Regresses the dominant modulation frequency of each trace against the
/// field magnitude (mT) through the origin. Reports `gamma_mhz_per_t`.
///
/// Traces without a detectable modulation are dropped with a warning; at
/// least three must remain.
pub fn fit_larmor(traces: &[(f64, CoherenceTrace)]) -> Result<FitResult> {
    let mut warnings = Vec::new();
    let mut pts = Vec::new();
    for (b, tr) in traces {
        if !(b.is_finite() && *b >= 0.0) {
            return Err(invalid("field magnitudes must be finite and >= 0"));
        }
        match modulation_frequency(tr) {
            Ok(f) if *b > 0.0 => pts.push((*b * 1e-3, f)),
            Ok(_) => warnings.push(FitWarning::Rejected(format!("trace at {b} mT has zero field"))),
            Err(Error::NoModulation(m)) => {
                warnings.push(FitWarning::Rejected(format!("trace at {b} mT: {m}")))
            }
            Err(e) => return Err(e),
        }
    }
    if pts.len() < 3 {
        return Err(Error::Underdetermined(format!(
            "{} usable traces; >= 3 required",
            pts.len()
        )));
    }
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let slope = sxy / sxx;
    let residuals = DVector::from_iterator(pts.len(), pts.iter().map(|(x, y)| slope * x - y));
    let dof = (pts.len() - 1) as f64;
    let variance = residuals.norm_squared() / dof / sxx;
    let outcome = LmOutcome {
        params: DVector::from_element(1, slope),
        jacobian: DMatrix::from_iterator(pts.len(), 1, pts.iter().map(|p| p.0)),
        residuals,
        iterations: 1,
        converged: true,
        message: "closed-form regression".into(),
    };
    let mut result = FitResult::from_outcome(
        &["gamma_mhz_per_t"],
        vec![slope],
        DMatrix::from_element(1, 1, variance),
        &outcome,
    );
    result.warnings = warnings;
    Ok(result)
}
