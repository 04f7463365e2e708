//! Least-squares inversions: peaks, ZFS, orientation, coherence decays,
//! decoupling scaling, nuclear Larmor regression, polarization and field
//! magnitude.

mod coherence;
mod larmor;
mod lm;
mod magnetometry;
mod monte_carlo;
mod orientation;
mod peaks;
mod polarization;

pub use coherence::{
    cpmg_scaling_model, fit_cpmg_scaling, fit_decay, stretched_exponential, CPMG_SHARPNESS,
};
pub use larmor::{fit_larmor, modulation_frequency};
pub use lm::{
    jacobian_check, levenberg_marquardt, pseudo_inverse_psd, FnProblem, LeastSquaresProblem,
    LmOptions, LmOutcome,
};
pub use magnetometry::{field_shift, invert_field, FieldInversion};
pub use monte_carlo::{add_gaussian_noise, monte_carlo, seeded_rng};
pub use orientation::{
    canonical_orientation, equivalent_orientations, fit_orientation, fit_orientation_with,
    icosahedron_vertices, orientation_distance, OrientationDataset, OrientationFitOptions,
    OrientationPoint, OrientationProblem,
};
pub use peaks::{fit_peaks, zfs_from_peaks, PeakGuess, PeakProblem, ZfsEstimate};
pub use polarization::{
    cluster_orientations, fit_polarization, ClusterReport, PolarizationScan, CLASS_CENTERS,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::Result;

/// Named diagnostics attached to a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// Data cannot pin down every parameter.
    Unidentifiable(String),
    /// A parameter finished on a box bound.
    AtBound(String),
    /// Input excluded from the fit.
    Rejected(String),
    /// Scan shows no clear polarization.
    Unpolarized,
    /// Minimum is degenerate under a symmetry; the canonical member is
    /// reported along with the class size.
    Symmetry { class_size: usize },
    Other(String),
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::Unidentifiable(m) => write!(f, "unidentifiable: {m}"),
            FitWarning::AtBound(p) => write!(f, "parameter '{p}' at bound"),
            FitWarning::Rejected(m) => write!(f, "rejected: {m}"),
            FitWarning::Unpolarized => f.write_str("scan is unpolarized (A/C < 0.05)"),
            FitWarning::Symmetry { class_size } => {
                write!(f, "solution unique up to {class_size} equivalent orientations")
            }
            FitWarning::Other(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
}

/// Outcome of any fit in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<Param>,
    /// Covariance of `params`, in the reported units.
    pub covariance: DMatrix<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<FitWarning>,
    pub message: String,
}

impl FitResult {
    pub(crate) fn from_outcome(names: &[&str], values: Vec<f64>, covariance: DMatrix<f64>, outcome: &LmOutcome) -> Self {
        Self {
            params: names
                .iter()
                .zip(values)
                .map(|(n, v)| Param {
                    name: n.to_string(),
                    value: v,
                })
                .collect(),
            covariance,
            residual_norm: outcome.residual_norm(),
            converged: outcome.converged,
            iterations: outcome.iterations,
            warnings: Vec::new(),
            message: outcome.message.clone(),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.params[i].value)
    }

    /// One-sigma uncertainty from the covariance diagonal.
    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index(name)
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
    }

    pub fn has_warning(&self, pred: impl Fn(&FitWarning) -> bool) -> bool {
        self.warnings.iter().any(pred)
    }

    /// Checks the container invariants: finite values, symmetric PSD
    /// covariance, non-negative residual norm.
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        let n = self.params.len();
        if self.covariance.nrows() != n || self.covariance.ncols() != n {
            return Err(Error::Numerical("covariance shape mismatch".into()));
        }
        if !(self.residual_norm >= 0.0) {
            return Err(Error::Numerical("negative residual norm".into()));
        }
        if n > 0 {
            let sym = (&self.covariance + self.covariance.transpose()) * 0.5;
            let scale = sym.amax().max(1.0);
            let min = nalgebra::SymmetricEigen::new(sym).eigenvalues.min();
            if min < -1e-10 * scale {
                return Err(Error::Numerical("covariance not positive semi-definite".into()));
            }
        }
        Ok(())
    }
}

/// Linear change of variables `reported = J internal` applied to a
/// covariance.
pub(crate) fn transform_covariance(cov: &DMatrix<f64>, jac: &DMatrix<f64>) -> DMatrix<f64> {
    let out = jac * cov * jac.transpose();
    (&out + out.transpose()) * 0.5
}
