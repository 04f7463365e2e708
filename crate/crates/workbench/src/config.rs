//! Run configuration: JSON, unknown keys rejected, optional named preset
//! underneath the user's keys.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use triplet_sense::coherent::{CoherencePreset, NoiseModel, NuclearSpin};
use triplet_sense::photophysics::{MicrowaveDrive, RateSet};
use triplet_sense::spin::{FieldVector, Orientation, Pair, TripletModel, DEFAULT_G};

use crate::error::{Result, WorkbenchError};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_mhz: f64,
    pub e_mhz: f64,
    /// Z-Y-Z Euler angles, degrees.
    pub euler_deg: [f64; 3],
    pub g: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_mhz: 1891.0,
            e_mhz: 459.0,
            euler_deg: [0.0; 3],
            g: DEFAULT_G,
        }
    }
}

impl ModelConfig {
    pub fn to_model(&self) -> Result<TripletModel> {
        let [a, b, c] = self.euler_deg;
        Ok(TripletModel::new(self.d_mhz, self.e_mhz, Orientation::from_degrees(a, b, c)?, self.g)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Gaussian standard deviation in the units of the generated values.
    pub sigma: f64,
    /// Photon counts per unit intensity; switches to shot noise with
    /// `sigma_i = sqrt(scale * I_i) / scale`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts_scale: Option<f64>,
}

impl NoiseConfig {
    pub fn is_active(&self) -> bool {
        self.sigma > 0.0 || self.counts_scale.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
    /// Second, fixed microwave tone for double resonance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hold_mhz: Option<f64>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            start_mhz: 800.0,
            stop_mhz: 2500.0,
            points: 1701,
            hold_mhz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoherenceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<CoherencePreset>,
    /// Takes precedence over `preset`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_model: Option<NoiseModel>,
}

impl CoherenceConfig {
    pub fn noise_model(&self) -> Result<Option<NoiseModel>> {
        match (&self.noise_model, self.preset) {
            (Some(n), _) => {
                n.validate()?;
                Ok(Some(n.clone()))
            }
            (None, Some(p)) => Ok(Some(p.noise_model()?)),
            (None, None) => Ok(None),
        }
    }

    pub fn require_noise_model(&self) -> Result<NoiseModel> {
        self.noise_model()?
            .ok_or_else(|| WorkbenchError::config("config", "coherence: set 'preset' or 'noise_model'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Hahn,
    Cpmg,
    Eseem,
    Rabi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub sequence: SequenceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<Pair>,
    pub pulses: usize,
    pub t_max_us: f64,
    pub points: usize,
    pub rabi_mhz: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            sequence: SequenceKind::Hahn,
            pair: None,
            pulses: 1,
            t_max_us: 10.0,
            points: 200,
            rabi_mhz: 10.0,
        }
    }
}

impl TraceConfig {
    /// `points` samples ending at `t_max_us`, starting one step after zero.
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.t_max_us > 0.0 && self.t_max_us.is_finite()) {
            return Err(WorkbenchError::config("config", "trace: need points >= 2 and t_max_us > 0"));
        }
        let dt = self.t_max_us / self.points as f64;
        Ok((1..=self.points).map(|i| i as f64 * dt).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarizationConfig {
    pub theta0_deg: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub step_deg: f64,
}

impl Default for PolarizationConfig {
    fn default() -> Self {
        Self {
            theta0_deg: 60.0,
            amplitude: 1000.0,
            offset: 100.0,
            step_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpmgConfig {
    /// Defaults to the preset's sweep, or powers of two up to 1024.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<Pair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrientationScanConfig {
    /// Lab-frame field directions; normalized on use.
    pub directions: Vec<[f64; 3]>,
    pub magnitudes_mt: Vec<f64>,
    /// Per-point uncertainty written to the dataset.
    pub sigma_mhz: f64,
}

impl Default for OrientationScanConfig {
    fn default() -> Self {
        Self {
            directions: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            magnitudes_mt: (1..=8).map(|k| 5.0 * k as f64).collect(),
            sigma_mhz: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub rates: RateSet,
    pub drive: MicrowaveDrive,
    pub field_mt: [f64; 3],
    pub noise: NoiseConfig,
    pub spectrum: SpectrumConfig,
    pub coherence: CoherenceConfig,
    pub trace: TraceConfig,
    pub nuclei: Vec<NuclearSpin>,
    pub polarization: PolarizationConfig,
    pub cpmg: CpmgConfig,
    pub orientation_scan: OrientationScanConfig,
    /// File stem for generated outputs; defaults to the dataset kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_stem: Option<String>,
}

/// Named starting configurations, one per reproducible figure dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigPreset {
    Fig1d,
    Fig1e,
    Fig2b,
    Fig2d,
    Fig3b,
    Fig3d,
    Fig4a,
    Fig4d,
}

impl ConfigPreset {
    pub const ALL: [ConfigPreset; 8] = [
        ConfigPreset::Fig1d,
        ConfigPreset::Fig1e,
        ConfigPreset::Fig2b,
        ConfigPreset::Fig2d,
        ConfigPreset::Fig3b,
        ConfigPreset::Fig3d,
        ConfigPreset::Fig4a,
        ConfigPreset::Fig4d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConfigPreset::Fig1d => "fig1d",
            ConfigPreset::Fig1e => "fig1e",
            ConfigPreset::Fig2b => "fig2b",
            ConfigPreset::Fig2d => "fig2d",
            ConfigPreset::Fig3b => "fig3b",
            ConfigPreset::Fig3d => "fig3d",
            ConfigPreset::Fig4a => "fig4a",
            ConfigPreset::Fig4d => "fig4d",
        }
    }

    pub fn config(self) -> RunConfig {
        let mut c = RunConfig {
            preset: Some(self.name().into()),
            ..RunConfig::default()
        };
        match self {
            ConfigPreset::Fig1d => {
                c.spectrum = SpectrumConfig {
                    points: 3401,
                    ..SpectrumConfig::default()
                };
            }
            ConfigPreset::Fig1e => {
                c.coherence.preset = Some(CoherencePreset::ProtonatedCryogenic);
                c.trace.t_max_us = 12.0;
            }
            ConfigPreset::Fig2b => {
                c.model.euler_deg = [30.0, 90.0, 0.0];
                c.orientation_scan.directions.extend([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]);
            }
            ConfigPreset::Fig2d => {}
            ConfigPreset::Fig3b => {
                c.coherence.preset = Some(CoherencePreset::DeuteratedCryogenic);
                c.trace.t_max_us = 160.0;
            }
            ConfigPreset::Fig3d => {
                c.coherence.preset = Some(CoherencePreset::DeuteratedCryogenic);
            }
            ConfigPreset::Fig4a => {
                c.field_mt = [0.0, 0.0, 20.0];
                c.trace = TraceConfig {
                    sequence: SequenceKind::Eseem,
                    pair: Some(Pair::YZ),
                    t_max_us: 6.0,
                    points: 512,
                    ..TraceConfig::default()
                };
                c.nuclei = vec![NuclearSpin::proton([[0.0; 3], [0.0; 3], [0.05, 0.0, 0.0]]).expect("finite tensor")];
            }
            ConfigPreset::Fig4d => {
                c.field_mt = [0.0, 0.0, 1.0];
                c.spectrum = SpectrumConfig {
                    start_mhz: 2330.0,
                    stop_mhz: 2370.0,
                    points: 801,
                    hold_mhz: None,
                };
            }
        }
        c
    }
}

impl fmt::Display for ConfigPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfigPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ConfigPreset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let valid: Vec<_> = ConfigPreset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset '{s}' (valid: {})", valid.join(", "))
        })
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses JSON text. Errors carry the line and column or the offending
    /// field.
    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let err = |e: serde_json::Error| WorkbenchError::config(source_name, e.to_string());
        let user: RunConfig = serde_json::from_str(text).map_err(err)?;
        let Some(name) = &user.preset else {
            user.validate(source_name)?;
            return Ok(user);
        };
        let preset: ConfigPreset = name.parse().map_err(|m| WorkbenchError::config(source_name, m))?;
        let mut base = serde_json::to_value(preset.config()).expect("config serializes");
        merge(&mut base, serde_json::from_str(text).map_err(err)?);
        let merged: RunConfig = serde_json::from_value(base).map_err(err)?;
        merged.validate(source_name)?;
        Ok(merged)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_json(&io::read_to_string(path)?, &path.display().to_string())
    }

    pub fn validate(&self, source_name: &str) -> Result<()> {
        let bad = |m: &str| Err(WorkbenchError::config(source_name, m));
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return bad("noise.sigma must be finite and >= 0");
        }
        if let Some(s) = self.noise.counts_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("noise.counts_scale must be positive");
            }
            if self.noise.sigma > 0.0 {
                return bad("noise.sigma and noise.counts_scale are exclusive");
            }
        }
        if self.spectrum.points < 2 || !(self.spectrum.stop_mhz > self.spectrum.start_mhz) {
            return bad("spectrum: need points >= 2 and stop_mhz > start_mhz");
        }
        if !(self.polarization.step_deg > 0.0 && self.polarization.step_deg < 180.0) {
            return bad("polarization.step_deg must lie in (0, 180)");
        }
        if self.orientation_scan.directions.iter().any(|d| d.iter().all(|x| *x == 0.0)) {
            return bad("orientation_scan.directions must be non-zero");
        }
        self.model.to_model().map_err(|e| WorkbenchError::config(source_name, format!("model: {e}")))?;
        self.rates
            .validate()
            .map_err(|e| WorkbenchError::config(source_name, format!("rates: {e}")))?;
        Ok(())
    }

    /// Seed to use for noise: the command-line value wins over the file.
    /// Noise without any seed is a configuration error.
    pub fn effective_seed(&self, cli_seed: Option<u64>) -> Result<Option<u64>> {
        let seed = cli_seed.or(self.seed);
        if self.noise.is_active() && seed.is_none() {
            return Err(WorkbenchError::config(
                "config",
                "noise injection requires a seed (config 'seed' or --seed)",
            ));
        }
        Ok(seed)
    }

    pub fn field(&self) -> Result<FieldVector> {
        let [x, y, z] = self.field_mt;
        Ok(FieldVector::new(x, y, z)?)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
