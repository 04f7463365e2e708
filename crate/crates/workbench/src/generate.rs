//! Synthetic datasets from the forward models.

use nalgebra::Vector3;

use triplet_sense::coherent::{
    coherence_function, hahn_echo_eseem, rabi_trace, t2_sweep, CoherenceTrace, PulseSequence, RabiOptions,
};
use triplet_sense::inference::{add_gaussian_noise, seeded_rng, OrientationDataset, OrientationPoint, PolarizationScan};
use triplet_sense::photophysics::{linear_grid, simulate_cw_odmr, simulate_double_resonance, OdmrSpectrum};
use triplet_sense::spin::{pair_frequency, FieldVector, Pair};
use triplet_sense::Execution;

use crate::config::{RunConfig, SequenceKind};
use crate::dataset::{Dataset, DatasetKind, Provenance};
use crate::error::{Result, WorkbenchError};

/// Noise streams per dataset kind, so kinds drawn from one seed are
/// independent.
fn stream(kind: DatasetKind) -> u64 {
    DatasetKind::ALL.iter().position(|k| *k == kind).unwrap() as u64
}

/// Adds the configured noise to `values`. `intensity` maps each value to a
/// non-negative intensity for shot noise.
fn inject(
    values: &mut [f64],
    config: &RunConfig,
    seed: Option<u64>,
    kind: DatasetKind,
    intensity: impl Fn(f64) -> f64,
) -> Result<()> {
    if !config.noise.is_active() {
        return Ok(());
    }
    let seed = seed.ok_or_else(|| WorkbenchError::config("config", "noise injection requires a seed"))?;
    let mut rng = seeded_rng(seed, stream(kind));
    match config.noise.counts_scale {
        Some(scale) => {
            let mut unit = vec![0.0; values.len()];
            add_gaussian_noise(&mut unit, 1.0, &mut rng)?;
            for (v, z) in values.iter_mut().zip(unit) {
                *v += z * (scale * intensity(*v).max(0.0)).sqrt() / scale;
            }
        }
        None => add_gaussian_noise(values, config.noise.sigma, &mut rng)?,
    }
    Ok(())
}

pub fn spectrum(config: &RunConfig) -> Result<OdmrSpectrum> {
    let s = &config.spectrum;
    let grid = linear_grid(s.start_mhz, s.stop_mhz, s.points);
    let model = config.model.to_model()?;
    let field = config.field()?;
    Ok(match s.hold_mhz {
        Some(hold) => simulate_double_resonance(&model, &config.rates, &field, hold, &grid, &config.drive)?,
        None => simulate_cw_odmr(&model, &config.rates, &field, &grid, &config.drive)?,
    })
}

pub fn trace(config: &RunConfig) -> Result<CoherenceTrace> {
    let t = &config.trace;
    let grid = t.grid()?;
    let model = config.model.to_model()?;
    let noise = config.coherence.noise_model()?;
    let default_pair = config.coherence.preset.map_or(Pair::YZ, |p| p.hahn_pair());
    let pair = t.pair.unwrap_or(default_pair);
    Ok(match t.sequence {
        SequenceKind::Hahn | SequenceKind::Cpmg => {
            let noise = config.coherence.require_noise_model()?;
            let seq = if t.sequence == SequenceKind::Hahn {
                PulseSequence::hahn(pair, t.t_max_us, t.rabi_mhz)?
            } else {
                PulseSequence::cpmg(pair, t.pulses, t.t_max_us, t.rabi_mhz)?
            };
            coherence_function(&noise, &seq, &grid)?
        }
        SequenceKind::Eseem => {
            hahn_echo_eseem(&model, &config.field()?, &config.nuclei, pair, &grid, noise.as_ref())?
        }
        SequenceKind::Rabi => rabi_trace(
            &model,
            pair,
            t.rabi_mhz,
            &grid,
            &RabiOptions {
                contrast_scale: None,
                noise,
            },
        )?,
    })
}

pub fn polarization(config: &RunConfig) -> PolarizationScan {
    let p = &config.polarization;
    let n = (180.0 / p.step_deg).ceil() as usize;
    let samples = (0..n)
        .map(|i| {
            let a = i as f64 * p.step_deg;
            (a, p.offset + p.amplitude * (a - p.theta0_deg).to_radians().cos().powi(2))
        })
        .collect();
    PolarizationScan { samples }
}

pub fn cpmg_points(config: &RunConfig) -> Result<Vec<(f64, f64)>> {
    let noise = config.coherence.require_noise_model()?;
    let preset = config.coherence.preset;
    let counts = match (&config.cpmg.pulse_counts, preset) {
        (Some(c), _) => c.clone(),
        (None, Some(p)) => p.pulse_counts(),
        (None, None) => (0..=10).map(|k| 1usize << k).collect(),
    };
    let pair = config.cpmg.pair.or(preset.map(|p| p.decoupling_pair())).unwrap_or(Pair::XZ);
    let t2 = t2_sweep(Execution::default(), pair, &counts, &noise)?;
    Ok(counts.iter().map(|&n| n as f64).zip(t2).collect())
}

pub fn orientation_points(config: &RunConfig) -> Result<OrientationDataset> {
    let model = config.model.to_model()?;
    let scan = &config.orientation_scan;
    let mut points = Vec::new();
    for d in &scan.directions {
        let dir = Vector3::from(*d);
        for &m in &scan.magnitudes_mt {
            let field = FieldVector::along(&dir, m)?;
            for pair in Pair::ALL {
                points.push(OrientationPoint {
                    field,
                    pair,
                    frequency: pair_frequency(&model, &field, pair)?,
                    sigma: scan.sigma_mhz,
                });
            }
        }
    }
    Ok(OrientationDataset::new(points)?)
}

/// Builds a dataset of `kind` from `config`. Deterministic for a fixed seed
/// and noiseless when no noise is configured.
pub fn generate(kind: DatasetKind, config: &RunConfig, cli_seed: Option<u64>) -> Result<Dataset> {
    let seed = config.effective_seed(cli_seed)?;
    let description = match &config.preset {
        Some(p) => format!("{kind} from preset {p}"),
        None => format!("{kind} from configuration"),
    };
    let prov = Provenance::generator(description, seed, config.to_value());
    match kind {
        DatasetKind::Spectrum => {
            let mut s = spectrum(config)?;
            let mut v = s.contrast();
            inject(&mut v, config, seed, kind, |c| 1.0 + c)?;
            for (sample, c) in s.samples.iter_mut().zip(v) {
                sample.1 = c;
            }
            Dataset::from_spectrum(&s, prov)
        }
        DatasetKind::Trace => {
            let t = trace(config)?;
            let mut v = t.signal();
            inject(&mut v, config, seed, kind, |s| s)?;
            let noisy = CoherenceTrace::new(t.times().into_iter().zip(v).collect())?;
            Dataset::from_trace(&noisy, prov)
        }
        DatasetKind::Polarization => {
            let mut scan = polarization(config);
            let mut v: Vec<f64> = scan.samples.iter().map(|s| s.1).collect();
            inject(&mut v, config, seed, kind, |c| c)?;
            for (sample, c) in scan.samples.iter_mut().zip(v) {
                sample.1 = c.max(0.0);
            }
            Dataset::from_polarization(&PolarizationScan::new(scan.samples)?, prov)
        }
        DatasetKind::CpmgPoints => {
            if config.noise.counts_scale.is_some() {
                return Err(WorkbenchError::config("config", "counts_scale does not apply to cpmg-points"));
            }
            let mut pts = cpmg_points(config)?;
            let mut v: Vec<f64> = pts.iter().map(|p| p.1).collect();
            inject(&mut v, config, seed, kind, |t| t)?;
            for (p, t) in pts.iter_mut().zip(v) {
                p.1 = t;
            }
            Dataset::from_cpmg_points(&pts, prov)
        }
        DatasetKind::OrientationPoints => {
            if config.noise.counts_scale.is_some() {
                return Err(WorkbenchError::config(
                    "config",
                    "counts_scale does not apply to orientation-points",
                ));
            }
            let mut data = orientation_points(config)?;
            let mut v: Vec<f64> = data.points.iter().map(|p| p.frequency).collect();
            inject(&mut v, config, seed, kind, |f| f)?;
            for (p, f) in data.points.iter_mut().zip(v) {
                p.frequency = f;
            }
            Dataset::from_orientation(&data, prov)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigPreset;
    use triplet_sense::photophysics::simulate_cw_odmr;

    #[test]
    fn noiseless_spectrum_equals_direct_simulation() {
        let c = RunConfig::default();
        let d = generate(DatasetKind::Spectrum, &c, None).unwrap();
        let grid = linear_grid(800.0, 2500.0, 1701);
        let direct = simulate_cw_odmr(
            &c.model.to_model().unwrap(),
            &c.rates,
            &FieldVector::ZERO,
            &grid,
            &c.drive,
        )
        .unwrap();
        assert_eq!(d.to_spectrum().unwrap(), direct);
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut c = ConfigPreset::Fig1e.config();
        c.noise.sigma = 0.01;
        let a = generate(DatasetKind::Trace, &c, Some(3)).unwrap().to_csv();
        let b = generate(DatasetKind::Trace, &c, Some(3)).unwrap().to_csv();
        let other = generate(DatasetKind::Trace, &c, Some(4)).unwrap().to_csv();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn shot_noise_scales_with_intensity() {
        let mut c = RunConfig::default();
        c.noise.counts_scale = Some(1.0e4);
        c.polarization.offset = 0.0;
        let d = generate(DatasetKind::Polarization, &c, Some(1)).unwrap();
        let clean = polarization(&c);
        let dark = d.to_polarization().unwrap().samples.iter().zip(&clean.samples).filter(|(_, c)| c.1 < 1e-9).count();
        assert!(dark > 0);
        for (noisy, clean) in d.to_polarization().unwrap().samples.iter().zip(&clean.samples) {
            if clean.1 < 1e-9 {
                assert!(noisy.1.abs() < 1e-9);
            }
        }
    }
}
