//! Workbench for triplet spin sensors: run configuration, synthetic data
//! generation with seeded noise, dataset I/O, fits with plot data, and the
//! figure reproduction pipelines behind the `triplet-sense` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod generate;
pub mod io;
pub mod plot;
pub mod reproduce;

pub use error::{Result, WorkbenchError};
