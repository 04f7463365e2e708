use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions, LmOutcome};
use super::{transform_covariance, FitResult, FitWarning};
use crate::error::{invalid, Error, Result};
use crate::par::{self, Execution};
use crate::spin::{self, FieldVector, Orientation, Pair, TripletModel, ZfsParams};

/// One measured line in a field sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationPoint {
    pub field: FieldVector,
    pub pair: Pair,
    /// MHz.
    pub frequency: f64,
    /// MHz.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationDataset {
    pub points: Vec<OrientationPoint>,
}

const FIELD_EPS_MT: f64 = 1e-9;

impl OrientationDataset {
    pub fn new(points: Vec<OrientationPoint>) -> Result<Self> {
        let d = Self { points };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            p.field.validate()?;
            if !(p.frequency.is_finite() && p.sigma > 0.0 && p.sigma.is_finite()) {
                return Err(invalid("frequencies must be finite and sigmas positive"));
            }
        }
        Ok(())
    }

    /// Unit directions of the non-zero fields, merged when parallel or
    /// antiparallel.
    pub fn field_axes(&self) -> Vec<Vector3<f64>> {
        let mut axes: Vec<Vector3<f64>> = Vec::new();
        for p in &self.points {
            let v = p.field.vector();
            if v.norm() <= FIELD_EPS_MT {
                continue;
            }
            let u = v.normalize();
            if !axes.iter().any(|a| a.cross(&u).norm() < 1e-9) {
                axes.push(u);
            }
        }
        axes
    }

    /// Number of independent constraints the field directions place on the
    /// lab-frame ZFS tensor. The spectrum along a unit direction `u`
    /// depends only on `|B|` and `u^T T u`, so an orientation needs >= 3.
    pub fn tensor_rank(&self) -> usize {
        let axes = self.field_axes();
        if axes.is_empty() {
            return 0;
        }
        let design = DMatrix::from_fn(axes.len(), 5, |i, k| {
            let u = &axes[i];
            match k {
                0 => u.x * u.x - u.z * u.z,
                1 => u.y * u.y - u.z * u.z,
                2 => 2.0 * u.x * u.y,
                3 => 2.0 * u.x * u.z,
                _ => 2.0 * u.y * u.z,
            }
        });
        design.rank(1e-9)
    }

    /// Lab-frame sign flips that map every field onto itself or its negative.
    pub fn lab_symmetries(&self) -> Vec<Matrix3<f64>> {
        sign_matrices()
            .into_iter()
            .filter(|s| {
                self.points.iter().all(|p| {
                    let v = p.field.vector();
                    let w = s * v;
                    (w - v).norm() <= 1e-12 * (1.0 + v.norm()) || (w + v).norm() <= 1e-12 * (1.0 + v.norm())
                })
            })
            .map(|s| if s.determinant() < 0.0 { -s } else { s })
            .fold(Vec::new(), |mut acc, s| {
                if !acc.iter().any(|a: &Matrix3<f64>| (a - s).norm() < 1e-12) {
                    acc.push(s);
                }
                acc
            })
    }
}

fn sign_matrices() -> Vec<Matrix3<f64>> {
    let mut out = Vec::new();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                out.push(Matrix3::from_diagonal(&Vector3::new(sx, sy, sz)));
            }
        }
    }
    out
}

/// Proper sign flips of the molecular axes; the ZFS spectrum is invariant
/// under them.
fn molecular_symmetries() -> Vec<Matrix3<f64>> {
    sign_matrices().into_iter().filter(|s| s.determinant() > 0.0).collect()
}

/// All orientations producing identical spectra for fields preserved by
/// `lab_symmetries` (pass just the identity for a generic dataset).
pub fn equivalent_orientations(o: &Orientation, lab_symmetries: &[Matrix3<f64>]) -> Vec<Orientation> {
    let r = o.matrix();
    let mut out: Vec<Orientation> = Vec::new();
    let identity = [Matrix3::identity()];
    let labs = if lab_symmetries.is_empty() { &identity[..] } else { lab_symmetries };
    for l in labs {
        for p in molecular_symmetries() {
            let m = l * r * p;
            if !out.iter().any(|q| (q.matrix() - m).norm() < 1e-9) {
                out.push(Orientation::from_matrix(&m));
            }
        }
    }
    out
}

/// Representative with `beta in [0, 90]` and `gamma in [0, 180)` degrees,
/// smallest `alpha` first when several qualify.
pub fn canonical_orientation(o: &Orientation, lab_symmetries: &[Matrix3<f64>]) -> Orientation {
    let eps = 1e-9;
    let class = equivalent_orientations(o, lab_symmetries);
    let in_domain = |q: &Orientation| {
        q.beta <= std::f64::consts::FRAC_PI_2 + eps && q.gamma < std::f64::consts::PI - eps
    };
    let key = |q: &Orientation| (q.alpha, q.beta, q.gamma);
    class
        .iter()
        .filter(|q| in_domain(q))
        .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
        .or_else(|| class.iter().min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap()))
        .copied()
        .unwrap_or(*o)
}

/// Smallest geodesic angle (rad) between `a` and any orientation
/// equivalent to `b`.
pub fn orientation_distance(a: &Orientation, b: &Orientation, lab_symmetries: &[Matrix3<f64>]) -> f64 {
    equivalent_orientations(b, lab_symmetries)
        .iter()
        .map(|q| a.misorientation(q))
        .fold(f64::INFINITY, f64::min)
}

/// The 12 vertices of a regular icosahedron on the unit sphere.
pub fn icosahedron_vertices() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v = Vec::with_capacity(12);
    for a in [-1.0, 1.0] {
        for b in [-phi, phi] {
            v.push(Vector3::new(0.0, a, b));
            v.push(Vector3::new(a, b, 0.0));
            v.push(Vector3::new(b, 0.0, a));
        }
    }
    v.into_iter().map(|x| x.normalize()).collect()
}

/// Weighted residuals `(f_model - f_meas) / sigma` over Euler angles (rad).
pub struct OrientationProblem<'a> {
    pub data: &'a OrientationDataset,
    pub zfs: ZfsParams,
    pub g: f64,
}

impl OrientationProblem<'_> {
    fn model(&self, p: &DVector<f64>) -> TripletModel {
        TripletModel {
            zfs: self.zfs,
            orientation: Orientation {
                alpha: p[0],
                beta: p[1],
                gamma: p[2],
            },
            g: self.g,
        }
    }
}

impl LeastSquaresProblem for OrientationProblem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let model = self.model(p);
        let rt = model.orientation.matrix().transpose() * model.gamma_e();
        let mut r = DVector::zeros(self.data.points.len());
        for (i, pt) in self.data.points.iter().enumerate() {
            let e = spin::cubic_energies(&self.zfs, &(rt * pt.field.vector()));
            let (a, b) = pt.pair.levels();
            let f = (e[a.energy_index()] - e[b.energy_index()]).abs();
            r[i] = (f - pt.frequency) / pt.sigma;
        }
        Ok(r)
    }

    /// Implicit differentiation of the characteristic cubic: only the
    /// constant term depends on orientation.
    fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        let model = self.model(p);
        let gamma_e = model.gamma_e();
        let rt = model.orientation.matrix().transpose() * gamma_e;
        let derivs = model.orientation.matrix_derivatives();
        let x = self.zfs.principal_values();
        let mut j = DMatrix::zeros(self.data.points.len(), 3);
        for (i, pt) in self.data.points.iter().enumerate() {
            let b_lab = pt.field.vector();
            let b = rt * b_lab;
            let e = spin::cubic_energies(&self.zfs, &b);
            let (la, lb) = pt.pair.levels();
            let (ia, ib) = (la.energy_index(), lb.energy_index());
            let slope = |k: usize| (0..3).filter(|&m| m != k).map(|m| e[k] - e[m]).product::<f64>();
            let (sa, sb) = (slope(ia), slope(ib));
            let sign = (e[ia] - e[ib]).signum();
            for (k, dr) in derivs.iter().enumerate() {
                let db = dr.transpose() * b_lab * gamma_e;
                let dq = 2.0 * (x[0] * b.x * db.x + x[1] * b.y * db.y + x[2] * b.z * db.z);
                let da = if sa != 0.0 { -dq / sa } else { 0.0 };
                let dbb = if sb != 0.0 { -dq / sb } else { 0.0 };
                j[(i, k)] = sign * (da - dbb) / pt.sigma;
            }
        }
        Ok(j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationFitOptions {
    /// Initial `gamma` values per start direction, evenly spaced in `[0, pi)`.
    pub gamma_starts: usize,
    pub execution: Execution,
}

impl Default for OrientationFitOptions {
    fn default() -> Self {
        Self {
            gamma_starts: 4,
            execution: Execution::default(),
        }
    }
}

/// Euler angles minimizing the weighted frequency misfit, from a grid of
/// starts (icosahedron vertices for the molecular z axis times evenly
/// spaced `gamma`).
///
/// Reports `alpha_deg`, `beta_deg`, `gamma_deg` for the canonical member of
/// the symmetry class; the class size is attached as a warning.
pub fn fit_orientation(data: &OrientationDataset, zfs: ZfsParams, g: f64) -> Result<FitResult> {
    fit_orientation_with(data, zfs, g, &OrientationFitOptions::default())
}

pub fn fit_orientation_with(
    data: &OrientationDataset,
    zfs: ZfsParams,
    g: f64,
    options: &OrientationFitOptions,
) -> Result<FitResult> {
    data.validate()?;
    if !zfs.is_canonical() {
        return Err(invalid("ZFS parameters must be canonical"));
    }
    TripletModel {
        zfs,
        orientation: Orientation::identity(),
        g,
    }
    .validate()?;
    if data.points.len() < 3 {
        return Err(Error::Underdetermined(format!(
            "{} points cannot fix three angles",
            data.points.len()
        )));
    }
    let problem = OrientationProblem { data, zfs, g };
    let n_gamma = options.gamma_starts.max(1);
    let starts: Vec<DVector<f64>> = icosahedron_vertices()
        .into_iter()
        .flat_map(|v| {
            let alpha = v.y.atan2(v.x);
            let beta = v.z.clamp(-1.0, 1.0).acos();
            (0..n_gamma).map(move |k| {
                DVector::from_vec(vec![alpha, beta, std::f64::consts::PI * k as f64 / n_gamma as f64])
            })
        })
        .collect();
    let lm = LmOptions {
        scale: Some(DVector::from_element(3, 1.0)),
        ..LmOptions::default()
    };
    let outcomes: Vec<Result<LmOutcome>> =
        par::map(options.execution, &starts, |p0| levenberg_marquardt(&problem, p0.clone(), &lm));
    let mut best: Option<LmOutcome> = None;
    for o in outcomes {
        let o = o?;
        let better = match &best {
            None => true,
            Some(b) => o.residuals.norm_squared() < b.residuals.norm_squared() * (1.0 - 1e-12),
        };
        if better {
            best = Some(o);
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("no start converged".into()))?;

    let labs = data.lab_symmetries();
    let fitted = Orientation::from_matrix(
        &Orientation {
            alpha: best.params[0],
            beta: best.params[1],
            gamma: best.params[2],
        }
        .matrix(),
    );
    let canonical = canonical_orientation(&fitted, &labs);
    // polish at the canonical member so the covariance refers to it
    let p_canon = DVector::from_vec(vec![canonical.alpha, canonical.beta, canonical.gamma]);
    let polished = levenberg_marquardt(&problem, p_canon.clone(), &LmOptions { max_iterations: 50, ..lm })?;
    let final_out = if polished.residuals.norm_squared() <= best.residuals.norm_squared() * (1.0 + 1e-9) + 1e-300
        && (Orientation::from_matrix(
            &Orientation {
                alpha: polished.params[0],
                beta: polished.params[1],
                gamma: polished.params[2],
            }
            .matrix(),
        )
        .misorientation(&canonical)
            < 1e-6)
    {
        LmOutcome {
            params: p_canon,
            iterations: best.iterations,
            converged: best.converged,
            message: best.message.clone(),
            ..polished
        }
    } else {
        let residuals = problem.residuals(&p_canon)?;
        let jacobian = problem.jacobian(&p_canon)?;
        LmOutcome {
            params: p_canon,
            residuals,
            jacobian,
            iterations: best.iterations,
            converged: best.converged,
            message: best.message.clone(),
        }
    };
    let deg = 180.0 / std::f64::consts::PI;
    let cov = transform_covariance(&final_out.covariance(), &(DMatrix::identity(3, 3) * deg));
    let [a, b, c] = canonical.to_degrees();
    let mut result = FitResult::from_outcome(&["alpha_deg", "beta_deg", "gamma_deg"], vec![a, b, c], cov, &final_out);

    match data.tensor_rank() {
        0 => result.warnings.push(FitWarning::Unidentifiable(
            "all fields vanish; orientation is unobservable at zero field".into(),
        )),
        r @ (1 | 2) => result.warnings.push(FitWarning::Unidentifiable(format!(
            "field directions fix {r} of 3 orientation degrees of freedom; a continuous family fits equally well"
        ))),
        _ => {}
    }
    result.warnings.push(FitWarning::Symmetry {
        class_size: equivalent_orientations(&canonical, &labs).len(),
    });
    Ok(result)
}
