//! Forward models and inversion routines for surface molecular triplet spin
//! sensors.
//!
//! * [`spin`]: triplet Hamiltonian, eigensystems and transition tables.
//! * [`photophysics`]: five-level rate equations, cw-ODMR and double resonance.
//! * [`coherent`]: Rabi, filter-function decoherence, CPMG and ESEEM.
//! * [`inference`]: Levenberg-Marquardt fits and the sensing inversions.
//!
//! Sweeps over frequency grids, delay grids, pulse counts and Monte-Carlo
//! repetitions run through [`par`], which uses rayon when the `parallel`
//! feature is enabled.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coherent;
pub mod error;
pub mod inference;
pub mod par;
pub mod photophysics;
pub mod quadrature;
pub mod roots;
pub mod spin;

pub use error::{Error, Result};
pub use par::Execution;
