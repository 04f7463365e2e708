//! Coherent dynamics on the triplet: Rabi driving, filter-function
//! decoherence under Ramsey/Hahn/CPMG sequences, and electron spin echo
//! envelope modulation from a few coupled nuclei.
//!
//! Times are in us, frequencies in MHz. Dephasing spectral densities use
//! angular units (rad/us) throughout.

mod decoherence;
mod eseem;
mod presets;

pub use decoherence::{
    chi, coherence_at, coherence_function, coherence_function_with, filter_function,
    filter_function_from_positions, t2_effective, t2_sweep, NoiseComponent, NoiseModel,
    CHI_REL_TOL,
};
pub use eseem::{
    echo_density_matrix, hahn_echo_eseem, hahn_echo_eseem_with, nuclear_frequencies,
    NuclearSpin, DEUTERON_GAMMA, MAX_NUCLEI, PROTON_GAMMA,
};
pub use presets::{calibrate_lorentzian_amplitude, CoherencePreset};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::spin::{Pair, Sublevel, TripletModel};

/// One element of a pulse program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceElement {
    /// Resonant rectangular pulse; rotation angle `2 pi rabi duration`.
    Pulse {
        pair: Pair,
        rabi: f64,
        phase: f64,
        duration: f64,
    },
    Delay {
        duration: f64,
    },
    Readout {
        pair: Pair,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub elements: Vec<SequenceElement>,
}

/// Structure recovered from a Ramsey/Hahn/CPMG-type sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceShape {
    pub pair: Pair,
    /// Number of pi pulses (0 for Ramsey).
    pub n_pi: usize,
    /// Total free-evolution time, us.
    pub total_time: f64,
}

const ANGLE_TOL: f64 = 1e-6;

impl PulseSequence {
    pub fn new(elements: Vec<SequenceElement>) -> Result<Self> {
        let s = Self { elements };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.elements.len();
        for (i, el) in self.elements.iter().enumerate() {
            match *el {
                SequenceElement::Pulse { rabi, phase, duration, .. } => {
                    if !(duration >= 0.0 && duration.is_finite()) {
                        return Err(invalid("pulse duration must be finite and >= 0"));
                    }
                    if !(rabi >= 0.0 && rabi.is_finite() && phase.is_finite()) {
                        return Err(invalid("pulse Rabi frequency and phase must be finite"));
                    }
                }
                SequenceElement::Delay { duration } => {
                    if !(duration >= 0.0 && duration.is_finite()) {
                        return Err(invalid("delay must be finite and >= 0"));
                    }
                }
                SequenceElement::Readout { .. } => {
                    if i + 1 != n {
                        return Err(invalid("readout must be the last element"));
                    }
                }
            }
        }
        if !matches!(self.elements.last(), Some(SequenceElement::Readout { .. })) {
            return Err(invalid("sequence must end with exactly one readout"));
        }
        Ok(())
    }

    /// pi/2 - (t/2N - pi - t/N - ... - pi - t/2N) - pi/2 - readout, or a
    /// Ramsey pair of pi/2 pulses around a single delay for `n = 0`.
    pub fn cpmg(pair: Pair, n: usize, total_time: f64, rabi: f64) -> Result<Self> {
        if !(total_time >= 0.0 && total_time.is_finite()) {
            return Err(invalid("total time must be finite and >= 0"));
        }
        if !(rabi > 0.0 && rabi.is_finite()) {
            return Err(invalid("Rabi frequency must be positive"));
        }
        let half_pi = SequenceElement::Pulse {
            pair,
            rabi,
            phase: 0.0,
            duration: 0.25 / rabi,
        };
        let pi = SequenceElement::Pulse {
            pair,
            rabi,
            phase: 0.5 * PI,
            duration: 0.5 / rabi,
        };
        let mut el = vec![half_pi];
        if n == 0 {
            el.push(SequenceElement::Delay { duration: total_time });
        } else {
            let tau = total_time / (2.0 * n as f64);
            el.push(SequenceElement::Delay { duration: tau });
            for k in 0..n {
                el.push(pi);
                let d = if k + 1 == n { tau } else { 2.0 * tau };
                el.push(SequenceElement::Delay { duration: d });
            }
        }
        el.push(half_pi);
        el.push(SequenceElement::Readout { pair });
        Self::new(el)
    }

    pub fn hahn(pair: Pair, total_time: f64, rabi: f64) -> Result<Self> {
        Self::cpmg(pair, 1, total_time, rabi)
    }

    /// Recovers pair, pulse count and free-evolution time, rejecting
    /// anything other than equally spaced pi pulses between pi/2 pulses.
    pub fn shape(&self) -> Result<SequenceShape> {
        self.validate()?;
        let unsupported = |m: &str| Error::UnsupportedSequence(m.to_string());
        let readout_pair = match self.elements.last() {
            Some(SequenceElement::Readout { pair }) => *pair,
            _ => unreachable!(),
        };
        // merge delays; classify pulses
        enum Block {
            Free(f64),
            Half,
            Pi,
        }
        let mut blocks: Vec<Block> = Vec::new();
        for el in &self.elements[..self.elements.len() - 1] {
            match *el {
                SequenceElement::Delay { duration } => match blocks.last_mut() {
                    Some(Block::Free(t)) => *t += duration,
                    _ => blocks.push(Block::Free(duration)),
                },
                SequenceElement::Pulse { pair, rabi, duration, .. } => {
                    if pair != readout_pair {
                        return Err(unsupported("pulses must address the readout pair"));
                    }
                    let turns = 2.0 * rabi * duration;
                    if (turns - 0.5).abs() < ANGLE_TOL {
                        blocks.push(Block::Half);
                    } else if (turns - 1.0).abs() < ANGLE_TOL {
                        blocks.push(Block::Pi);
                    } else {
                        return Err(unsupported("only pi/2 and pi pulses are supported"));
                    }
                }
                SequenceElement::Readout { .. } => unreachable!(),
            }
        }
        if !matches!(blocks.first(), Some(Block::Half)) {
            return Err(unsupported("sequence must open with a pi/2 pulse"));
        }
        let body_end = if matches!(blocks.last(), Some(Block::Half)) && blocks.len() > 1 {
            blocks.len() - 1
        } else {
            blocks.len()
        };
        let body = &blocks[1..body_end];
        let mut delays = Vec::new();
        let mut n_pi = 0;
        let mut expect_free = true;
        for b in body {
            match b {
                Block::Free(t) if expect_free => {
                    delays.push(*t);
                    expect_free = false;
                }
                Block::Pi if !expect_free => {
                    n_pi += 1;
                    expect_free = true;
                }
                _ => return Err(unsupported("pulses and delays must alternate")),
            }
        }
        if expect_free || delays.is_empty() {
            return Err(unsupported("sequence must end with a free-evolution period"));
        }
        let total: f64 = delays.iter().sum();
        if n_pi > 0 {
            let tau = total / (2.0 * n_pi as f64);
            let tol = 1e-9 * total.max(f64::MIN_POSITIVE);
            for (k, &d) in delays.iter().enumerate() {
                let expected = if k == 0 || k == n_pi { tau } else { 2.0 * tau };
                if (d - expected).abs() > tol {
                    return Err(unsupported("pi pulses are not uniformly spaced"));
                }
            }
        }
        Ok(SequenceShape {
            pair: readout_pair,
            n_pi,
            total_time: total,
        })
    }
}

/// Samples of `(time us, signal)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTrace {
    pub samples: Vec<(f64, f64)>,
}

impl CoherenceTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        let s = Self { samples };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.iter().any(|(t, s)| !t.is_finite() || !s.is_finite()) {
            return Err(invalid("trace contains non-finite values"));
        }
        if self.samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("trace times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    pub fn signal(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }
}

pub(crate) fn check_time_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(invalid("time grid must be finite and non-negative"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("time grid must be strictly increasing"));
    }
    Ok(())
}

/// Options for [`rabi_trace`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RabiOptions {
    /// Maps full population transfer to a PL contrast; `None` means 1.
    pub contrast_scale: Option<f64>,
    /// Damps the oscillation with the pair's lifetime limit.
    pub noise: Option<NoiseModel>,
}

/// Population transferred to the second level of `pair` under a resonant
/// drive, `sin^2(pi rabi t)` in the ideal case, scaled by the contrast.
pub fn rabi_trace(
    model: &TripletModel,
    pair: Pair,
    rabi: f64,
    t_grid: &[f64],
    options: &RabiOptions,
) -> Result<CoherenceTrace> {
    model.validate()?;
    if !(rabi > 0.0 && rabi.is_finite()) {
        return Err(invalid("Rabi frequency must be positive"));
    }
    check_time_grid(t_grid)?;
    let scale = options.contrast_scale.unwrap_or(1.0);
    if !(scale.abs() <= 1.0) {
        return Err(invalid("contrast scale must lie in [-1, 1]"));
    }
    let t1_limit = match &options.noise {
        Some(noise) => {
            noise.validate()?;
            noise.lifetime_limit(pair)
        }
        None => f64::INFINITY,
    };
    let samples = t_grid
        .iter()
        .map(|&t| {
            let envelope = (-t / t1_limit).exp();
            let p = 0.5 - 0.5 * (2.0 * PI * rabi * t).cos() * envelope;
            (t, scale * p)
        })
        .collect();
    CoherenceTrace::new(samples)
}

/// Lifetime limit `2 / (1/T1_a + 1/T1_b)` for a pair of sublevels.
pub fn lifetime_limit(t1: &[f64; 3], pair: Pair) -> f64 {
    let (a, b) = pair.levels();
    let rate = |s: Sublevel| 1.0 / t1[s.index()];
    2.0 / (rate(a) + rate(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TripletModel {
        TripletModel::with_zfs(1891.0, 459.0).unwrap()
    }

    #[test]
    fn rabi_pi_and_two_pi() {
        let rabi = 7.5;
        let t = [0.0, 0.5 / rabi, 1.0 / rabi];
        let tr = rabi_trace(&model(), Pair::YZ, rabi, &t, &RabiOptions::default()).unwrap();
        assert!(tr.samples[0].1.abs() < 1e-15);
        assert!((tr.samples[1].1 - 1.0).abs() < 1e-12);
        assert!(tr.samples[2].1.abs() < 1e-8);
    }

    #[test]
    fn rabi_contrast_scale() {
        let rabi = 2.0;
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let opts = RabiOptions {
            contrast_scale: Some(0.07),
            noise: None,
        };
        let tr = rabi_trace(&model(), Pair::YZ, rabi, &t, &opts).unwrap();
        let peak = tr.signal().into_iter().fold(0.0, f64::max);
        assert!((peak - 0.07).abs() < 1e-12);
        assert!(rabi_trace(&model(), Pair::YZ, 0.0, &t, &opts).is_err());
    }

    #[test]
    fn sequence_shapes() {
        let s = PulseSequence::cpmg(Pair::XZ, 8, 40.0, 10.0).unwrap().shape().unwrap();
        assert_eq!(s.n_pi, 8);
        assert_eq!(s.pair, Pair::XZ);
        assert!((s.total_time - 40.0).abs() < 1e-12);
        let r = PulseSequence::cpmg(Pair::YZ, 0, 3.0, 10.0).unwrap().shape().unwrap();
        assert_eq!(r.n_pi, 0);
    }

    #[test]
    fn non_uniform_spacing_rejected() {
        let mut seq = PulseSequence::cpmg(Pair::YZ, 2, 10.0, 5.0).unwrap();
        if let SequenceElement::Delay { duration } = &mut seq.elements[1] {
            *duration *= 1.3;
        }
        assert!(matches!(seq.shape(), Err(Error::UnsupportedSequence(_))));
    }

    #[test]
    fn readout_must_be_last() {
        let el = vec![
            SequenceElement::Readout { pair: Pair::YZ },
            SequenceElement::Delay { duration: 1.0 },
        ];
        assert!(PulseSequence::new(el).is_err());
        assert!(PulseSequence::new(vec![SequenceElement::Delay { duration: -1.0 }]).is_err());
    }

    #[test]
    fn harmonic_lifetime_limit() {
        let t1 = [400.0, 100.0, 400.0];
        assert!((lifetime_limit(&t1, Pair::XZ) - 400.0).abs() < 1e-12);
        assert!((lifetime_limit(&t1, Pair::YZ) - 160.0).abs() < 1e-12);
    }
}
