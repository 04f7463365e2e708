use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use super::decoherence::{chi, NoiseComponent, NoiseModel};
use crate::error::{invalid, Error, Result};
use crate::spin::Pair;

/// Calibrated noise environments for protonated and deuterated pentacene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoherencePreset {
    #[serde(rename = "Pc-H14-RT")]
    ProtonatedRoomTemperature,
    #[serde(rename = "Pc-H14-4K")]
    ProtonatedCryogenic,
    #[serde(rename = "Pc-D14-4K")]
    DeuteratedCryogenic,
}

/// Correlation time of the slow bath, us.
const BATH_CORRELATION_US: f64 = 5000.0;

impl CoherencePreset {
    pub const ALL: [CoherencePreset; 3] = [
        CoherencePreset::ProtonatedRoomTemperature,
        CoherencePreset::ProtonatedCryogenic,
        CoherencePreset::DeuteratedCryogenic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoherencePreset::ProtonatedRoomTemperature => "Pc-H14-RT",
            CoherencePreset::ProtonatedCryogenic => "Pc-H14-4K",
            CoherencePreset::DeuteratedCryogenic => "Pc-D14-4K",
        }
    }

    /// Hahn-echo T2 on the Ty-Tz pair, us.
    pub fn hahn_t2(self) -> f64 {
        match self {
            CoherencePreset::ProtonatedRoomTemperature => 2.4,
            CoherencePreset::ProtonatedCryogenic => 3.4,
            CoherencePreset::DeuteratedCryogenic => 39.8,
        }
    }

    /// Lifetimes of Tx, Ty, Tz in us.
    pub fn lifetimes(self) -> [f64; 3] {
        match self {
            CoherencePreset::ProtonatedRoomTemperature => [100.0, 40.0, 100.0],
            CoherencePreset::ProtonatedCryogenic => [140.0, 60.0, 140.0],
            CoherencePreset::DeuteratedCryogenic => [400.0, 120.0, 400.0],
        }
    }

    pub fn correlation_time(self) -> f64 {
        BATH_CORRELATION_US
    }

    pub fn hahn_pair(self) -> Pair {
        Pair::YZ
    }

    /// Pair protected by dynamical decoupling.
    pub fn decoupling_pair(self) -> Pair {
        Pair::XZ
    }

    /// Pulse counts of the decoupling sweep.
    pub fn pulse_counts(self) -> Vec<usize> {
        let max_exp = match self {
            CoherencePreset::DeuteratedCryogenic => 8,
            _ => 10,
        };
        (0..=max_exp).map(|k| 1usize << k).collect()
    }

    /// Lorentzian amplitude (rad/us) that reproduces [`Self::hahn_t2`].
    pub fn amplitude(self) -> Result<f64> {
        static CACHE: [OnceLock<Result<f64>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        let slot = match self {
            CoherencePreset::ProtonatedRoomTemperature => 0,
            CoherencePreset::ProtonatedCryogenic => 1,
            CoherencePreset::DeuteratedCryogenic => 2,
        };
        CACHE[slot]
            .get_or_init(|| {
                calibrate_lorentzian_amplitude(
                    self.lifetimes(),
                    self.correlation_time(),
                    self.hahn_pair(),
                    1,
                    self.hahn_t2(),
                )
            })
            .clone()
    }

    pub fn noise_model(self) -> Result<NoiseModel> {
        NoiseModel::new(
            self.lifetimes(),
            vec![NoiseComponent::Lorentzian {
                b: self.amplitude()?,
                tau_c: self.correlation_time(),
            }],
        )
    }

    /// Squared amplitude ratio of this preset to the deuterated one.
    pub fn coupling_ratio(self) -> Result<f64> {
        let d = CoherencePreset::DeuteratedCryogenic.amplitude()?;
        Ok((self.amplitude()? / d).powi(2))
    }
}

impl fmt::Display for CoherencePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoherencePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoherencePreset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| invalid(format!("unknown preset '{s}'")))
    }
}

/// Amplitude `b` of a Lorentzian bath with correlation time `tau_c` such
/// that the `n`-pulse coherence on `pair` falls to 1/e at `target_t2`.
///
/// `chi` is quadratic in `b`, so one quadrature at unit amplitude fixes it.
pub fn calibrate_lorentzian_amplitude(
    t1: [f64; 3],
    tau_c: f64,
    pair: Pair,
    n: usize,
    target_t2: f64,
) -> Result<f64> {
    let unit = NoiseModel::new(t1, vec![NoiseComponent::Lorentzian { b: 1.0, tau_c }])?;
    let limit = unit.lifetime_limit(pair);
    if !(target_t2 > 0.0 && target_t2 < limit) {
        return Err(invalid(format!(
            "target T2 {target_t2} us must lie in (0, {limit}) us"
        )));
    }
    if !(tau_c > 0.0 && tau_c.is_finite()) {
        return Err(invalid("correlation time must be positive"));
    }
    let x = chi(&unit, n, target_t2)?;
    Ok(((1.0 - target_t2 / limit) / x).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coherent::t2_effective;

    #[test]
    fn presets_reproduce_hahn_t2() {
        for p in CoherencePreset::ALL {
            let noise = p.noise_model().unwrap();
            let t2 = t2_effective(p.hahn_pair(), 1, &noise).unwrap();
            assert!((t2 / p.hahn_t2() - 1.0).abs() < 1e-5, "{p}: {t2}");
        }
    }

    #[test]
    fn names_round_trip() {
        for p in CoherencePreset::ALL {
            assert_eq!(p.name().parse::<CoherencePreset>().unwrap(), p);
        }
        assert!("Pc-X".parse::<CoherencePreset>().is_err());
    }

    #[test]
    fn protonated_bath_couples_more_strongly() {
        let r = CoherencePreset::ProtonatedCryogenic.coupling_ratio().unwrap();
        assert!(r > 10.0);
    }
}
