use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{check_time_grid, lifetime_limit, CoherenceTrace, PulseSequence};
use crate::error::{invalid, Error, Result};
use crate::par::{self, Execution};
use crate::quadrature::integrate;
use crate::roots::brent;
use crate::spin::Pair;

/// Relative tolerance of the dephasing integral.
pub const CHI_REL_TOL: f64 = 1e-6;

const TWO_PI: f64 = 2.0 * PI;
const MAX_BASE_SEGMENTS: usize = 1 << 19;

/// One additive component of the dephasing spectral density `S(w)`,
/// with `w` in rad/us.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseComponent {
    /// Flat density `S = s0`.
    White { s0: f64 },
    /// Ornstein-Uhlenbeck noise: `S = 2 b^2 tau_c / (1 + w^2 tau_c^2)`,
    /// `b` in rad/us, `tau_c` in us.
    Lorentzian { b: f64, tau_c: f64 },
    /// Piecewise-linear density through `(omega, density)` nodes, zero
    /// outside the tabulated range.
    Tabulated { omega: Vec<f64>, density: Vec<f64> },
}

impl NoiseComponent {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseComponent::White { s0 } => {
                if !(*s0 >= 0.0 && s0.is_finite()) {
                    return Err(invalid("white noise level must be finite and >= 0"));
                }
            }
            NoiseComponent::Lorentzian { b, tau_c } => {
                if !(*b >= 0.0 && b.is_finite() && *tau_c >= 0.0 && tau_c.is_finite()) {
                    return Err(invalid("Lorentzian amplitude and correlation time must be finite and >= 0"));
                }
            }
            NoiseComponent::Tabulated { omega, density } => {
                if omega.len() < 2 || omega.len() != density.len() {
                    return Err(invalid("tabulated spectrum needs >= 2 matching nodes"));
                }
                if omega.iter().any(|w| !w.is_finite() || *w < 0.0)
                    || omega.windows(2).any(|w| w[1] <= w[0])
                {
                    return Err(invalid("tabulated frequencies must be >= 0 and strictly increasing"));
                }
                if density.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(invalid("tabulated density must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// `S(w)`.
    pub fn density(&self, omega: f64) -> f64 {
        match self {
            NoiseComponent::White { s0 } => *s0,
            NoiseComponent::Lorentzian { b, tau_c } => {
                2.0 * b * b * tau_c / (1.0 + (omega * tau_c).powi(2))
            }
            NoiseComponent::Tabulated { omega: w, density: s } => interpolate(w, s, omega),
        }
    }

    fn is_silent(&self) -> bool {
        match self {
            NoiseComponent::White { s0 } => *s0 == 0.0,
            NoiseComponent::Lorentzian { b, tau_c } => *b == 0.0 || *tau_c == 0.0,
            NoiseComponent::Tabulated { density, .. } => density.iter().all(|s| *s == 0.0),
        }
    }
}

fn interpolate(w: &[f64], s: &[f64], x: f64) -> f64 {
    if x < w[0] || x > w[w.len() - 1] {
        return 0.0;
    }
    let i = w.partition_point(|v| *v <= x).clamp(1, w.len() - 1);
    let f = (x - w[i - 1]) / (w[i] - w[i - 1]);
    s[i - 1] + f * (s[i] - s[i - 1])
}

/// Relaxation lifetimes plus dephasing spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Lifetimes of Tx, Ty, Tz in us.
    pub t1: [f64; 3],
    #[serde(default)]
    pub dephasing: Vec<NoiseComponent>,
}

impl NoiseModel {
    pub fn new(t1: [f64; 3], dephasing: Vec<NoiseComponent>) -> Result<Self> {
        let m = Self { t1, dephasing };
        m.validate()?;
        Ok(m)
    }

    /// Pure lifetime decay, no dephasing.
    pub fn lifetime_only(t1: [f64; 3]) -> Result<Self> {
        Self::new(t1, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1.iter().any(|t| !(*t > 0.0) || t.is_nan()) {
            return Err(invalid("T1 lifetimes must be > 0"));
        }
        self.dephasing.iter().try_for_each(NoiseComponent::validate)
    }

    pub fn lifetime_limit(&self, pair: Pair) -> f64 {
        lifetime_limit(&self.t1, pair)
    }

    /// Total `S(w)`.
    pub fn density(&self, omega: f64) -> f64 {
        self.dephasing.iter().map(|c| c.density(omega)).sum()
    }

    /// Copy with every Lorentzian amplitude multiplied by `factor`.
    pub fn scale_lorentzian(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.dephasing {
            if let NoiseComponent::Lorentzian { b, .. } = c {
                *b *= factor;
            }
        }
        out
    }
}

/// CPMG filter function `F_N(z)` at `z = w t`; `n = 0` is the Ramsey
/// (free induction) filter.
pub fn filter_function(n: usize, z: f64) -> f64 {
    if n == 0 {
        let s = (0.5 * z).sin();
        return 2.0 * s * s;
    }
    let nf = n as f64;
    let c = (z / (2.0 * nf)).cos();
    if c.abs() < 1e-3 {
        return filter_function_from_positions(&cpmg_positions(n), z);
    }
    let outer = if n.is_multiple_of(2) { (0.5 * z).sin() } else { (0.5 * z).cos() };
    let q = (z / (4.0 * nf)).sin();
    8.0 * outer * outer * q.powi(4) / (c * c)
}

/// Filter function for pi pulses at fractional positions `positions`
/// (ascending, within `[0, 1]`) of the free-evolution time.
pub fn filter_function_from_positions(positions: &[f64], z: f64) -> f64 {
    let mut edges = Vec::with_capacity(positions.len() + 2);
    edges.push(0.0);
    edges.extend_from_slice(positions);
    edges.push(1.0);
    let (mut re, mut im) = (0.0, 0.0);
    let mut sign = 1.0;
    for w in edges.windows(2) {
        let (sb, cb) = (z * w[1]).sin_cos();
        let (sa, ca) = (z * w[0]).sin_cos();
        re += sign * (cb - ca);
        im += sign * (sb - sa);
        sign = -sign;
    }
    0.5 * (re * re + im * im)
}

fn cpmg_positions(n: usize) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 - 0.5) / n as f64).collect()
}

fn filter_period(n: usize) -> f64 {
    if n == 0 {
        TWO_PI
    } else {
        4.0 * PI * n as f64
    }
}

fn filter_mean(n: usize) -> f64 {
    1.0 + 2.0 * n as f64
}

/// `x - atan(x)`, accurate for small `x`.
fn x_minus_atan(x: f64) -> f64 {
    if x < 1e-2 {
        let x2 = x * x;
        x * x2 * (1.0 / 3.0 - x2 * (1.0 / 5.0 - x2 / 7.0))
    } else {
        x - x.atan()
    }
}

/// Dephasing exponent `chi(t)` of a single component under `n` equally
/// spaced pi pulses.
fn component_chi(c: &NoiseComponent, n: usize, t: f64) -> Result<f64> {
    if t == 0.0 || c.is_silent() {
        return Ok(0.0);
    }
    match c {
        NoiseComponent::White { s0 } => Ok(0.5 * s0 * t),
        NoiseComponent::Lorentzian { b, tau_c } => {
            let (b, tau_c) = (*b, *tau_c);
            let nodes: Vec<f64> = (-6..=6).map(|k| 2f64.powi(k) / tau_c).collect();
            // (1/pi) int_{wc}^inf S / w^2 dw
            let tail = move |wc: f64| {
                2.0 * b * b * tau_c * tau_c / PI * x_minus_atan(1.0 / (wc * tau_c))
            };
            numeric_chi(&|w| c.density(w), &nodes, f64::INFINITY, &tail, n, t)
        }
        NoiseComponent::Tabulated { omega, .. } => {
            let end = omega[omega.len() - 1];
            let tail = |wc: f64| {
                if wc >= end {
                    return 0.0;
                }
                let mut pts = vec![wc];
                pts.extend(omega.iter().copied().filter(|w| *w > wc));
                integrate(|w| c.density(w) / (w * w), &pts, 1e-10, 0.0, 4096).value / PI
            };
            numeric_chi(&|w| c.density(w), omega, end, &tail, n, t)
        }
    }
}

/// Integrates `(t/pi) S(z/t) F_N(z) / z^2` over `z` in period-aligned
/// blocks, then replaces `F_N` by its mean beyond the last block.
fn numeric_chi(
    density: &dyn Fn(f64) -> f64,
    nodes: &[f64],
    support_end: f64,
    tail: &dyn Fn(f64) -> f64,
    n: usize,
    t: f64,
) -> Result<f64> {
    let period = filter_period(n);
    let mean = filter_mean(n);
    let z_end = support_end * t;
    let scale = t / PI;
    let integrand = |z: f64| scale * density(z / t) * filter_function(n, z) / (z * z);
    let g = |z: f64| scale * density(z / t) / (z * z);

    let mut z_lo = 0.0;
    let mut z_hi = (8.0 * period).max(64.0 * TWO_PI);
    let mut total = 0.0;
    let mut segments = 0usize;
    loop {
        let hi = z_hi.min(z_end);
        let mut pts: Vec<f64> = Vec::new();
        let first = (z_lo / TWO_PI).ceil() as usize;
        let last = (hi / TWO_PI).floor() as usize;
        pts.push(z_lo);
        pts.extend((first..=last).map(|k| k as f64 * TWO_PI));
        pts.extend(nodes.iter().map(|w| w * t).filter(|z| *z > z_lo && *z < hi));
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        segments += pts.len();
        let q = integrate(integrand, &pts, 0.1 * CHI_REL_TOL, 0.0, 8 * pts.len() + 1024);
        if !q.value.is_finite() {
            return Err(Error::Numerical("dephasing integral diverged".into()));
        }
        total += q.value;
        z_lo = hi;
        if hi >= z_end {
            return Ok(total);
        }
        let tail_value = mean * tail(hi / t);
        let remainder = 2.0 * mean * period * g(hi);
        let done = remainder <= 0.1 * CHI_REL_TOL * (total + tail_value).abs()
            || segments >= MAX_BASE_SEGMENTS;
        if done {
            return Ok(total + tail_value);
        }
        z_hi = 2.0 * hi;
    }
}

/// Dephasing exponent summed over all components.
pub fn chi(noise: &NoiseModel, n: usize, t: f64) -> Result<f64> {
    noise.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("time must be finite and >= 0"));
    }
    noise
        .dephasing
        .iter()
        .map(|c| component_chi(c, n, t))
        .sum()
}

/// `C(t) = exp(-chi(t) - t / T1_limit)` for `n` pi pulses on `pair`.
pub fn coherence_at(noise: &NoiseModel, pair: Pair, n: usize, t: f64) -> Result<f64> {
    let x = chi(noise, n, t)?;
    Ok((-x - t / noise.lifetime_limit(pair)).exp())
}

/// Evaluates the coherence of `sequence` with its free-evolution time
/// rescaled to every point of `t_grid`.
pub fn coherence_function(
    noise: &NoiseModel,
    sequence: &PulseSequence,
    t_grid: &[f64],
) -> Result<CoherenceTrace> {
    coherence_function_with(Execution::default(), noise, sequence, t_grid)
}

pub fn coherence_function_with(
    exec: Execution,
    noise: &NoiseModel,
    sequence: &PulseSequence,
    t_grid: &[f64],
) -> Result<CoherenceTrace> {
    noise.validate()?;
    let shape = sequence.shape()?;
    check_time_grid(t_grid)?;
    let values = par::try_map(exec, t_grid, |&t| coherence_at(noise, shape.pair, shape.n_pi, t))?;
    CoherenceTrace::new(t_grid.iter().copied().zip(values).collect())
}

/// 1/e time of the CPMG coherence with `n` pi pulses on `pair`.
pub fn t2_effective(pair: Pair, n: usize, noise: &NoiseModel) -> Result<f64> {
    noise.validate()?;
    let limit = noise.lifetime_limit(pair);
    if !limit.is_finite() {
        return Err(invalid("lifetime limit must be finite"));
    }
    let h = |t: f64| chi(noise, n, t).map(|x| x + t / limit - 1.0);
    if h(limit)? <= 0.0 {
        return Ok(limit);
    }
    let mut failure = None;
    let root = brent(
        |t| match h(t) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        0.0,
        limit,
        1e-12,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    root
}

/// [`t2_effective`] over a list of pulse counts.
pub fn t2_sweep(exec: Execution, pair: Pair, counts: &[usize], noise: &NoiseModel) -> Result<Vec<f64>> {
    par::try_map(exec, counts, |&n| t2_effective(pair, n, noise))
}
