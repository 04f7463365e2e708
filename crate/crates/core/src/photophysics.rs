//! Five-level classical rate equations: optical pumping, intersystem
//! crossing, sublevel-selective decay and microwave population transfer.
//!
//! Levels are ordered `(S0, S1, Tx, Ty, Tz)`. Rates are in 1/us. In a
//! magnetic field the triplet slots refer to the field eigenstates under the
//! energy-order labelling of [`crate::spin`], and their ISC and decay rates
//! are the zero-field rates weighted by the eigenstate's sublevel character.

use nalgebra::{Matrix5, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::{self, Execution};
use crate::spin::{self, FieldVector, Pair, Sublevel, TripletModel};

/// Position of each level in a [`PopulationVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    S0,
    S1,
    Tx,
    Ty,
    Tz,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::S0, Level::S1, Level::Tx, Level::Ty, Level::Tz];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn triplet(s: Sublevel) -> Level {
        match s {
            Sublevel::Tx => Level::Tx,
            Sublevel::Ty => Level::Ty,
            Sublevel::Tz => Level::Tz,
        }
    }
}

/// Two-way microwave transfer between triplet sublevels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicrowaveTransfer {
    pub pair: Pair,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSet {
    /// S0 -> S1 excitation, proportional to laser power.
    pub k_pump: f64,
    /// S1 -> S0 fluorescence.
    pub k_fl: f64,
    /// S1 -> (Tx, Ty, Tz).
    pub k_isc: [f64; 3],
    /// (Tx, Ty, Tz) -> S0.
    pub k_dec: [f64; 3],
    #[serde(default)]
    pub mw: Vec<MicrowaveTransfer>,
}

impl Default for RateSet {
    /// Placeholder rates with `Ty` as the fast-decaying readout level.
    fn default() -> Self {
        Self {
            k_pump: 10.0,
            k_fl: 1.0e3,
            k_isc: [6.0, 2.0, 0.5],
            k_dec: [0.05, 0.5, 0.02],
            mw: Vec::new(),
        }
    }
}

impl RateSet {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k_pump, self.k_fl]
            .into_iter()
            .chain(self.k_isc)
            .chain(self.k_dec)
            .chain(self.mw.iter().map(|m| m.rate));
        for r in all {
            if !(r.is_finite() && r >= 0.0) {
                return Err(invalid(format!("rate {r} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// At least one ISC channel and one triplet decay channel are open.
    pub fn is_pumpable(&self) -> bool {
        self.k_isc.iter().any(|&k| k > 0.0) && self.k_dec.iter().any(|&k| k > 0.0)
    }

    pub fn with_transfer(mut self, pair: Pair, rate: f64) -> Self {
        self.mw.push(MicrowaveTransfer { pair, rate });
        self
    }

    /// Rates for the field eigenstates: each eigenstate inherits the ISC and
    /// decay rates of its zero-field sublevel character.
    pub fn in_field(&self, model: &TripletModel, field: &FieldVector) -> Result<RateSet> {
        let eig = spin::solve(model, field)?;
        let character = spin::sublevel_character(&eig);
        let mut out = self.clone();
        for i in 0..3 {
            let slot = Sublevel::from_energy_index(i).unwrap().index();
            out.k_isc[slot] = (0..3).map(|a| character[(i, a)] * self.k_isc[a]).sum();
            out.k_dec[slot] = (0..3).map(|a| character[(i, a)] * self.k_dec[a]).sum();
        }
        Ok(out)
    }

    /// Generator `M` of `dp/dt = M p`. Each diagonal entry is minus the sum
    /// of the off-diagonal entries of its column.
    pub fn rate_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::zeros();
        let mut add = |from: usize, to: usize, k: f64| {
            m[(to, from)] += k;
        };
        let (s0, s1) = (Level::S0.index(), Level::S1.index());
        add(s0, s1, self.k_pump);
        add(s1, s0, self.k_fl);
        for (i, s) in Sublevel::ALL.iter().enumerate() {
            let t = Level::triplet(*s).index();
            add(s1, t, self.k_isc[i]);
            add(t, s0, self.k_dec[i]);
        }
        for tr in &self.mw {
            let (a, b) = tr.pair.levels();
            let (a, b) = (Level::triplet(a).index(), Level::triplet(b).index());
            add(a, b, tr.rate);
            add(b, a, tr.rate);
        }
        for j in 0..5 {
            let off: f64 = (0..5).filter(|&i| i != j).map(|i| m[(i, j)]).sum();
            m[(j, j)] = -off;
        }
        m
    }
}

/// Occupation probabilities of `(S0, S1, Tx, Ty, Tz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationVector(pub [f64; 5]);

impl PopulationVector {
    pub fn new(p: [f64; 5]) -> Result<Self> {
        let v = Self(p);
        v.validate()?;
        Ok(v)
    }

    pub fn ground() -> Self {
        Self([1.0, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|x| !x.is_finite() || *x < -1e-12) {
            return Err(invalid(format!("invalid populations {:?}", self.0)));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("populations sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn get(&self, level: Level) -> f64 {
        self.0[level.index()]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    fn vector(&self) -> Vector5<f64> {
        Vector5::from_column_slice(&self.0)
    }
}

/// Solves `dp/dt = M p` from `p0` for a time `t` (us).
pub fn evolve_populations(rates: &RateSet, p0: &PopulationVector, t: f64) -> Result<PopulationVector> {
    rates.validate()?;
    p0.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid(format!("evolution time {t} must be finite and non-negative")));
    }
    if t == 0.0 {
        return Ok(*p0);
    }
    let p = transition_matrix(&rates.rate_matrix(), t) * p0.vector();
    Ok(PopulationVector([p[0], p[1], p[2], p[3], p[4]]))
}

/// `exp(M t)` for a rate generator by uniformization and squaring.
///
/// With `P = I + M / lambda` column-stochastic and non-negative, every term
/// of `exp(M h) = e^{-lambda h} sum (lambda h)^k P^k / k!` and every
/// squaring is a sum of non-negative numbers, so entries never suffer
/// cancellation even for stiff rate sets and very long times.
fn transition_matrix(m: &Matrix5<f64>, t: f64) -> Matrix5<f64> {
    const STEP: f64 = 0.5;
    const TERMS: usize = 24;
    let lambda = (0..5).map(|i| -m[(i, i)]).fold(0.0, f64::max);
    if lambda == 0.0 {
        return Matrix5::identity();
    }
    let squarings = ((lambda * t / STEP).log2().ceil().max(0.0)) as i32;
    let h = t / 2f64.powi(squarings);
    let x = lambda * h;
    let p = Matrix5::identity() + m / lambda;
    let mut term = Matrix5::identity();
    let mut sum = Matrix5::identity();
    for k in 1..TERMS {
        term = p * term * (x / k as f64);
        sum += term;
    }
    let mut out = sum * (-x).exp();
    normalize_columns(&mut out);
    for _ in 0..squarings {
        out = out * out;
        normalize_columns(&mut out);
    }
    out
}

/// Rounding in the conserved mode doubles with every squaring; the exact
/// propagator has unit column sums, so restore them.
fn normalize_columns(m: &mut Matrix5<f64>) {
    for mut col in m.column_iter_mut() {
        let total: f64 = col.iter().sum();
        col /= total;
    }
}

/// Normalized null vector of the rate matrix.
pub fn steady_state(rates: &RateSet) -> Result<PopulationVector> {
    rates.validate()?;
    let m = rates.rate_matrix();
    let scale = m.abs().max();
    if scale == 0.0 {
        return Err(Error::Ambiguous("all rates vanish".into()));
    }
    let sv = m.singular_values();
    let mut s: Vec<f64> = sv.iter().cloned().collect();
    s.sort_by(f64::total_cmp);
    if s[1] <= 1e-11 * scale {
        return Err(Error::Ambiguous(format!(
            "rate matrix has a multi-dimensional null space (singular values {:.3e}, {:.3e})",
            s[0], s[1]
        )));
    }
    let mut a = m;
    for j in 0..5 {
        a[(0, j)] = 1.0;
    }
    let mut rhs = Vector5::zeros();
    rhs[0] = 1.0;
    let p = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("steady-state system is singular".into()))?;
    Ok(PopulationVector([p[0], p[1], p[2], p[3], p[4]]))
}

/// Fluorescence photon rate `k_fl * p[S1]`, 1/us.
pub fn photon_rate(rates: &RateSet, p: &PopulationVector) -> f64 {
    rates.k_fl * p.get(Level::S1)
}

/// Lorentzian with unit peak height.
pub fn lorentzian(f: f64, center: f64, fwhm: f64) -> f64 {
    let x = 2.0 * (f - center) / fwhm;
    1.0 / (1.0 + x * x)
}

/// Samples of `(frequency MHz, contrast)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrSpectrum {
    pub samples: Vec<(f64, f64)>,
}

impl OdmrSpectrum {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        let s = Self { samples };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.iter().any(|(f, c)| !f.is_finite() || !c.is_finite()) {
            return Err(invalid("spectrum contains non-finite values"));
        }
        if self.samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("spectrum frequencies must be strictly increasing"));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    pub fn contrast(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }

    /// Local maxima of `|contrast|` whose magnitude exceeds `rel_threshold`
    /// times the global maximum, as `(frequency, contrast)`, sorted by
    /// decreasing magnitude.
    pub fn extrema(&self, rel_threshold: f64) -> Vec<(f64, f64)> {
        let mag: Vec<f64> = self.samples.iter().map(|s| s.1.abs()).collect();
        let top = mag.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return Vec::new();
        }
        let n = mag.len();
        let mut out: Vec<(f64, f64)> = (0..n)
            .filter(|&i| {
                let left = if i == 0 { f64::NEG_INFINITY } else { mag[i - 1] };
                let right = if i + 1 == n { f64::NEG_INFINITY } else { mag[i + 1] };
                mag[i] > left && mag[i] >= right && mag[i] >= rel_threshold * top
            })
            .map(|i| self.samples[i])
            .collect();
        out.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        out
    }
}

/// Microwave drive used by the cw simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrowaveDrive {
    /// Lorentzian FWHM, MHz.
    pub linewidth_fwhm: f64,
    /// Peak transfer rate for unit transition strength, 1/us.
    pub mw_strength: f64,
    /// Lab-frame microwave field direction (unit vector).
    pub drive_axis: [f64; 3],
}

impl Default for MicrowaveDrive {
    fn default() -> Self {
        let r = 1.0 / 3f64.sqrt();
        Self {
            linewidth_fwhm: 5.0,
            mw_strength: 0.5,
            drive_axis: [r, r, r],
        }
    }
}

impl MicrowaveDrive {
    fn validate(&self) -> Result<()> {
        if !(self.linewidth_fwhm > 0.0 && self.linewidth_fwhm.is_finite()) {
            return Err(invalid("linewidth must be positive"));
        }
        if !(self.mw_strength >= 0.0 && self.mw_strength.is_finite()) {
            return Err(invalid("microwave strength must be non-negative"));
        }
        Ok(())
    }

    fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.drive_axis)
    }
}

/// Field-dependent pieces shared by every point of a sweep.
struct SweepContext {
    rates: RateSet,
    lines: Vec<(Pair, f64, f64)>,
}

impl SweepContext {
    fn new(model: &TripletModel, rates: &RateSet, field: &FieldVector, drive: &MicrowaveDrive) -> Result<Self> {
        rates.validate()?;
        drive.validate()?;
        let table = spin::transition_table(model, field, &drive.axis())?;
        Ok(Self {
            rates: rates.in_field(model, field)?,
            lines: table.iter().map(|t| (t.pair, t.frequency, t.amplitude)).collect(),
        })
    }

    fn transfers(&self, f: f64, drive: &MicrowaveDrive) -> impl Iterator<Item = MicrowaveTransfer> + '_ {
        let (fwhm, strength) = (drive.linewidth_fwhm, drive.mw_strength);
        self.lines.iter().map(move |&(pair, f0, amp)| MicrowaveTransfer {
            pair,
            rate: strength * lorentzian(f, f0, fwhm) * amp,
        })
    }

    fn pl(&self, extra: &[MicrowaveTransfer]) -> Result<f64> {
        let mut r = self.rates.clone();
        r.mw.extend_from_slice(extra);
        Ok(photon_rate(&r, &steady_state(&r)?))
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("frequency grid is empty"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|f| !f.is_finite()) {
        return Err(invalid("frequency grid must be finite and strictly ascending"));
    }
    Ok(())
}

/// cw-ODMR contrast `(PL(f) - PL_off) / PL_off` over `grid`.
pub fn simulate_cw_odmr(
    model: &TripletModel,
    rates: &RateSet,
    field: &FieldVector,
    grid: &[f64],
    drive: &MicrowaveDrive,
) -> Result<OdmrSpectrum> {
    simulate_cw_odmr_with(Execution::default(), model, rates, field, grid, drive)
}

pub fn simulate_cw_odmr_with(
    exec: Execution,
    model: &TripletModel,
    rates: &RateSet,
    field: &FieldVector,
    grid: &[f64],
    drive: &MicrowaveDrive,
) -> Result<OdmrSpectrum> {
    check_grid(grid)?;
    let ctx = SweepContext::new(model, rates, field, drive)?;
    let pl_off = ctx.pl(&[])?;
    let contrast = par::try_map(exec, grid, |&f| {
        let mw: Vec<_> = ctx.transfers(f, drive).collect();
        Ok::<_, Error>((ctx.pl(&mw)? - pl_off) / pl_off)
    })?;
    OdmrSpectrum::new(grid.iter().cloned().zip(contrast).collect())
}

/// Two-tone spectrum: a permanent tone at `hold_f` plus the swept tone.
/// Contrast is referenced to the hold-only steady state.
pub fn simulate_double_resonance(
    model: &TripletModel,
    rates: &RateSet,
    field: &FieldVector,
    hold_f: f64,
    grid: &[f64],
    drive: &MicrowaveDrive,
) -> Result<OdmrSpectrum> {
    simulate_double_resonance_with(Execution::default(), model, rates, field, hold_f, grid, drive)
}

pub fn simulate_double_resonance_with(
    exec: Execution,
    model: &TripletModel,
    rates: &RateSet,
    field: &FieldVector,
    hold_f: f64,
    grid: &[f64],
    drive: &MicrowaveDrive,
) -> Result<OdmrSpectrum> {
    check_grid(grid)?;
    if !hold_f.is_finite() {
        return Err(invalid("hold frequency must be finite"));
    }
    let ctx = SweepContext::new(model, rates, field, drive)?;
    let hold: Vec<_> = ctx.transfers(hold_f, drive).collect();
    let pl_ref = ctx.pl(&hold)?;
    let contrast = par::try_map(exec, grid, |&f| {
        let mut mw = hold.clone();
        mw.extend(ctx.transfers(f, drive));
        Ok::<_, Error>((ctx.pl(&mw)? - pl_ref) / pl_ref)
    })?;
    OdmrSpectrum::new(grid.iter().cloned().zip(contrast).collect())
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
