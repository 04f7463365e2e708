use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::roots::bisect;
use crate::spin::{pair_frequency, FieldVector, Pair, TripletModel};

/// Bisection tolerance on the field magnitude, mT.
const FIELD_TOL_MT: f64 = 1e-4;
const MONOTONE_GRID: usize = 64;

/// Field magnitude recovered from a line shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldInversion {
    pub magnitude_mt: f64,
    /// Forward shift at the recovered magnitude, MHz.
    pub model_shift_mhz: f64,
}

/// Shift of the `pair` line (MHz) for a field of `magnitude` mT along the
/// unit lab-frame `direction`, relative to zero field.
pub fn field_shift(model: &TripletModel, pair: Pair, direction: &Vector3<f64>, magnitude: f64) -> Result<f64> {
    let f0 = pair_frequency(model, &FieldVector::ZERO, pair)?;
    let f = pair_frequency(model, &FieldVector::along(direction, magnitude)?, pair)?;
    Ok(f - f0)
}

/// Magnitude of a field along the known `direction` that moves the `pair`
/// line by `shift` MHz, searched on `[0, b_max]` mT.
pub fn invert_field(
    shift: f64,
    pair: Pair,
    model: &TripletModel,
    direction: &Vector3<f64>,
    b_max: f64,
) -> Result<FieldInversion> {
    model.validate()?;
    if !shift.is_finite() {
        return Err(invalid("shift must be finite"));
    }
    if !(b_max > 0.0 && b_max.is_finite()) {
        return Err(invalid("b_max must be positive"));
    }
    let norm = direction.norm();
    if !(norm.is_finite() && (norm - 1.0).abs() < 1e-6) {
        return Err(invalid("direction must be a unit vector"));
    }
    if shift == 0.0 {
        return Ok(FieldInversion {
            magnitude_mt: 0.0,
            model_shift_mhz: 0.0,
        });
    }
    let grid: Vec<f64> = (0..=MONOTONE_GRID)
        .map(|i| b_max * i as f64 / MONOTONE_GRID as f64)
        .map(|b| field_shift(model, pair, direction, b))
        .collect::<Result<_>>()?;
    let diffs: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    let rising = diffs.iter().all(|d| *d > 0.0);
    let falling = diffs.iter().all(|d| *d < 0.0);
    if !rising && !falling {
        return Err(Error::NonMonotone(format!(
            "shift of {pair} is not monotone on [0, {b_max}] mT; narrow the bracket"
        )));
    }
    let end = grid[MONOTONE_GRID];
    let inside = if rising { shift > 0.0 && shift <= end } else { shift < 0.0 && shift >= end };
    if !inside {
        return Err(Error::OutOfRange(format!(
            "shift {shift} MHz outside the forward range [0, {end}] MHz on [0, {b_max}] mT"
        )));
    }
    let mut failure = None;
    let b = bisect(
        |b| match field_shift(model, pair, direction, b) {
            Ok(s) => s - shift,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        0.0,
        b_max,
        FIELD_TOL_MT,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(FieldInversion {
        magnitude_mt: b,
        model_shift_mhz: field_shift(model, pair, direction, b)?,
    })
}
