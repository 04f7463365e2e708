//! Fits of stored datasets with machine-readable reports and overlay data.

use serde::Serialize;

use triplet_sense::coherent::CoherenceTrace;
use triplet_sense::inference::{
    cpmg_scaling_model, fit_cpmg_scaling, fit_decay, fit_larmor, fit_orientation, fit_peaks, fit_polarization,
    modulation_frequency, stretched_exponential, zfs_from_peaks, FitResult, FitWarning, PeakProblem,
};
use triplet_sense::spin::{pair_frequency, Orientation};

use crate::config::ModelConfig;
use crate::dataset::{Dataset, DatasetKind};
use crate::error::{Result, WorkbenchError};
use crate::plot::{Plot, Series};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterReport {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub kind: String,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub message: String,
    pub parameters: Vec<ParameterReport>,
    pub derived: Vec<ParameterReport>,
    pub warnings: Vec<String>,
    /// Data minus model at each overlay abscissa.
    pub residuals: Vec<f64>,
}

impl FitReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.iter().chain(&self.derived).find(|p| p.name == name).map(|p| p.value)
    }
}

/// Data and model sampled on the data abscissae.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub x_name: &'static str,
    pub x_unit: &'static str,
    pub y_unit: &'static str,
    pub x: Vec<f64>,
    pub data: Vec<f64>,
    pub model: Vec<f64>,
}

impl Overlay {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},data,model,residual\n{},{},{},{}\n",
            self.x_name, self.x_unit, self.y_unit, self.y_unit, self.y_unit
        );
        for i in 0..self.x.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.x[i],
                self.data[i],
                self.model[i],
                self.data[i] - self.model[i]
            ));
        }
        out
    }

    pub fn plot(&self, title: &str, log_x: bool) -> Plot {
        let pts = |v: &[f64]| self.x.iter().copied().zip(v.iter().copied()).collect();
        Plot {
            title: title.into(),
            x_label: format!("{} ({})", self.x_name, self.x_unit),
            y_label: self.y_unit.into(),
            log_x,
            series: vec![Series::markers("data", pts(&self.data)), Series::line("fit", pts(&self.model))],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub report: FitReport,
    pub overlay: Overlay,
}

/// What to fit in addition to the dataset itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    /// Number of Lorentzian lines; detected from the spectrum when absent.
    pub peaks: Option<usize>,
    /// Sensor parameters for orientation fits.
    pub model: ModelConfig,
}

fn report(kind: &str, r: &FitResult, derived: Vec<ParameterReport>, overlay: &Overlay) -> FitReport {
    FitReport {
        kind: kind.into(),
        converged: r.converged,
        iterations: r.iterations,
        residual_norm: r.residual_norm,
        message: r.message.clone(),
        parameters: r
            .params
            .iter()
            .map(|p| ParameterReport {
                name: p.name.clone(),
                value: p.value,
                std_error: r.std_error(&p.name),
            })
            .collect(),
        derived,
        warnings: r.warnings.iter().map(|w| w.to_string()).collect(),
        residuals: overlay.data.iter().zip(&overlay.model).map(|(d, m)| d - m).collect(),
    }
}

fn derived(name: &str, value: f64) -> ParameterReport {
    ParameterReport {
        name: name.into(),
        value,
        std_error: None,
    }
}

fn param(r: &FitResult, name: &str) -> f64 {
    r.get(name).expect("fit reports its own parameter names")
}

/// Number of clearly resolved lines, at most three.
fn detect_lines(spectrum: &triplet_sense::photophysics::OdmrSpectrum) -> usize {
    spectrum.extrema(0.1).len().clamp(1, 3)
}

pub fn run_fit(data: &Dataset, options: &FitOptions) -> Result<FitOutcome> {
    let kind = data.kind.name();
    match data.kind {
        DatasetKind::Spectrum => {
            let s = data.to_spectrum()?;
            let n = options.peaks.unwrap_or_else(|| detect_lines(&s));
            let r = fit_peaks(&s, n, None)?;
            let freqs = s.frequencies();
            let model = PeakProblem::model(&freqs, &nalgebra::DVector::from_vec(r.values()));
            let overlay = Overlay {
                x_name: "freq_mhz",
                x_unit: "MHz",
                y_unit: "relative",
                x: freqs,
                data: s.contrast(),
                model,
            };
            let mut extra = Vec::new();
            let all_lines_resolved = !r.has_warning(|w| matches!(w, FitWarning::Unidentifiable(_)));
            if n >= 2 && all_lines_resolved {
                let centers: Vec<f64> = (1..=n).map(|k| param(&r, &format!("center_{k}"))).collect();
                let z = zfs_from_peaks(&centers, None)?;
                extra.push(derived("d_mhz", z.zfs.d));
                extra.push(derived("e_mhz", z.zfs.e));
                extra.push(derived("consistency_residual_mhz", z.consistency_residual));
            }
            Ok(FitOutcome {
                report: report(kind, &r, extra, &overlay),
                overlay,
            })
        }
        DatasetKind::Trace => {
            let t = data.to_trace()?;
            let r = fit_decay(&t)?;
            let (a, t2, e, c) = (param(&r, "amplitude"), param(&r, "t2_us"), param(&r, "exponent"), param(&r, "offset"));
            let x = t.times();
            let overlay = Overlay {
                x_name: "t_us",
                x_unit: "us",
                y_unit: "relative",
                model: x.iter().map(|&ti| stretched_exponential(ti, a, t2, e, c)).collect(),
                data: t.signal(),
                x,
            };
            Ok(FitOutcome {
                report: report(kind, &r, Vec::new(), &overlay),
                overlay,
            })
        }
        DatasetKind::Polarization => {
            let scan = data.to_polarization()?;
            let r = fit_polarization(&scan)?;
            let (th, a, c) = (param(&r, "theta0_deg"), param(&r, "amplitude"), param(&r, "offset"));
            let overlay = Overlay {
                x_name: "angle_deg",
                x_unit: "deg",
                y_unit: "counts",
                x: scan.samples.iter().map(|s| s.0).collect(),
                data: scan.samples.iter().map(|s| s.1).collect(),
                model: scan.samples.iter().map(|s| c + a * (s.0 - th).to_radians().cos().powi(2)).collect(),
            };
            Ok(FitOutcome {
                report: report(kind, &r, Vec::new(), &overlay),
                overlay,
            })
        }
        DatasetKind::CpmgPoints => {
            let pts = data.to_cpmg_points()?;
            let r = fit_cpmg_scaling(&pts)?;
            let (t0, g, ts) = (param(&r, "t0_us"), param(&r, "gamma"), param(&r, "t_sat_us"));
            let overlay = Overlay {
                x_name: "n_pulses",
                x_unit: "count",
                y_unit: "us",
                x: pts.iter().map(|p| p.0).collect(),
                data: pts.iter().map(|p| p.1).collect(),
                model: pts.iter().map(|p| cpmg_scaling_model(p.0, t0, g, ts)).collect(),
            };
            Ok(FitOutcome {
                report: report(kind, &r, Vec::new(), &overlay),
                overlay,
            })
        }
        DatasetKind::OrientationPoints => {
            let o = data.to_orientation()?;
            let base = options.model.to_model()?;
            let r = fit_orientation(&o, base.zfs, base.g)?;
            let [a, b, c] = [param(&r, "alpha_deg"), param(&r, "beta_deg"), param(&r, "gamma_deg")];
            let fitted = base.with_orientation(Orientation::from_degrees(a, b, c)?);
            let model = o
                .points
                .iter()
                .map(|p| pair_frequency(&fitted, &p.field, p.pair))
                .collect::<triplet_sense::Result<Vec<_>>>()?;
            let z = fitted.orientation.to_lab(&nalgebra::Vector3::z());
            let overlay = Overlay {
                x_name: "point",
                x_unit: "index",
                y_unit: "MHz",
                x: (0..o.points.len()).map(|i| i as f64).collect(),
                data: o.points.iter().map(|p| p.frequency).collect(),
                model,
            };
            let extra = vec![derived("mol_z_lab_x", z.x), derived("mol_z_lab_y", z.y), derived("mol_z_lab_z", z.z)];
            Ok(FitOutcome {
                report: report(kind, &r, extra, &overlay),
                overlay,
            })
        }
    }
}

/// Regression of ESEEM modulation frequency on field magnitude (mT).
pub fn run_larmor_fit(traces: &[(f64, CoherenceTrace)]) -> Result<FitOutcome> {
    let r = fit_larmor(traces)?;
    let slope = param(&r, "gamma_mhz_per_t");
    let mut x = Vec::new();
    let mut data = Vec::new();
    for (b, t) in traces {
        if let Ok(f) = modulation_frequency(t) {
            x.push(*b);
            data.push(f);
        }
    }
    let overlay = Overlay {
        x_name: "field_mt",
        x_unit: "mT",
        y_unit: "MHz",
        model: x.iter().map(|b| slope * b * 1e-3).collect(),
        x,
        data,
    };
    Ok(FitOutcome {
        report: report("larmor", &r, Vec::new(), &overlay),
        overlay,
    })
}

/// Turns a non-converged fit into an error after its report was written.
pub fn require_converged(outcome: &FitOutcome) -> Result<()> {
    if outcome.report.converged {
        Ok(())
    } else {
        Err(WorkbenchError::Fit(format!(
            "{} fit did not converge: {}",
            outcome.report.kind, outcome.report.message
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ConfigPreset, RunConfig};
    use crate::generate::generate;

    #[test]
    fn zero_field_preset_fits_to_zfs() {
        let c = ConfigPreset::Fig1d.config();
        let d = generate(DatasetKind::Spectrum, &c, None).unwrap();
        let out = run_fit(&d, &FitOptions::default()).unwrap();
        assert!(out.report.converged);
        assert!((out.report.get("d_mhz").unwrap() - 1891.0).abs() < 1.0);
        assert!((out.report.get("e_mhz").unwrap() - 459.0).abs() < 1.0);
        assert_eq!(out.report.residuals.len(), d.rows());
    }

    #[test]
    fn hahn_preset_fits_its_t2() {
        let d = generate(DatasetKind::Trace, &ConfigPreset::Fig1e.config(), None).unwrap();
        let out = run_fit(&d, &FitOptions::default()).unwrap();
        assert!((out.report.get("t2_us").unwrap() / 3.4 - 1.0).abs() < 0.03);
    }

    #[test]
    fn polarization_fit_finds_the_axis() {
        let d = generate(DatasetKind::Polarization, &RunConfig::default(), None).unwrap();
        let out = run_fit(&d, &FitOptions::default()).unwrap();
        assert!((out.report.get("theta0_deg").unwrap() - 60.0).abs() < 1e-6);
        assert!(out.overlay.to_csv().starts_with("angle_deg,data,model,residual\ndeg,counts,counts,counts\n"));
    }

    #[test]
    fn unconverged_fit_is_an_error_with_fit_exit_code() {
        let d = generate(DatasetKind::Polarization, &RunConfig::default(), None).unwrap();
        let mut out = run_fit(&d, &FitOptions::default()).unwrap();
        assert!(require_converged(&out).is_ok());
        out.report.converged = false;
        out.report.message = "iteration limit reached".into();
        let err = require_converged(&out).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::FIT);
        assert!(err.to_string().contains("iteration limit reached"));
    }
}
