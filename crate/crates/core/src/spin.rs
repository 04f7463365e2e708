//! S = 1 triplet Hamiltonian: zero-field splitting plus vector Zeeman term.
//!
//! All energies are in MHz, fields in mT. Matrices are written in the
//! `|m = +1, 0, -1>` Zeeman basis. The zero-field eigenstates are the
//! Cartesian triplet states `|Tx>, |Ty>, |Tz>`, with energies
//! `D/3 + E`, `D/3 - E` and `-2D/3`, so that at zero field
//! `Tx<->Ty = 2E`, `Ty<->Tz = D - E` and `Tx<->Tz = D + E`.
//!
//! Sublevels away from zero field are labelled adiabatically by energy
//! order: the highest eigenstate is `Tx`, the middle `Ty`, the lowest `Tz`.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Bohr magneton over Planck's constant, MHz/mT.
pub const BOHR_MHZ_PER_MT: f64 = 13.996245;
/// Default electron g-factor.
pub const DEFAULT_G: f64 = 2.0023;
/// Sanity bound on field magnitude, mT.
pub const MAX_FIELD_MT: f64 = 1.0e4;

const HERMITIAN_RTOL: f64 = 1e-12;

/// Axial and rhombic zero-field splitting parameters, MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZfsParams {
    pub d: f64,
    pub e: f64,
}

impl ZfsParams {
    /// Builds canonical parameters, rejecting inputs outside `0 <= E <= D/3`.
    /// Use [`TripletModel::new`] to canonicalize arbitrary inputs instead.
    pub fn new(d: f64, e: f64) -> Result<Self> {
        if !(d.is_finite() && e.is_finite()) {
            return Err(invalid("ZFS parameters must be finite"));
        }
        if d < 0.0 || e < 0.0 || e > d / 3.0 * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "ZFS (D={d}, E={e}) outside canonical range 0 <= E <= D/3"
            )));
        }
        Ok(Self { d, e })
    }

    /// Principal values `(X, Y, Z)` of the traceless ZFS tensor.
    pub fn principal_values(&self) -> [f64; 3] {
        [self.d / 3.0 + self.e, self.d / 3.0 - self.e, -2.0 * self.d / 3.0]
    }

    /// Zero-field transitions `(2E, D - E, D + E)`.
    pub fn zero_field_transitions(&self) -> [f64; 3] {
        [2.0 * self.e, self.d - self.e, self.d + self.e]
    }

    pub fn is_canonical(&self) -> bool {
        self.d >= 0.0 && self.e >= 0.0 && self.e <= self.d / 3.0 * (1.0 + 1e-12)
    }

    /// Relabels molecular axes so that `0 <= E <= D/3` holds.
    ///
    /// Returns the canonical parameters and the proper rotation `P` whose
    /// columns are the new molecular axes expressed in the old molecular
    /// frame. A negative-D tensor is mapped to its negative, which leaves
    /// every transition frequency unchanged.
    pub fn canonicalize(d: f64, e: f64) -> Result<(ZfsParams, Matrix3<f64>)> {
        if !(d.is_finite() && e.is_finite()) {
            return Err(invalid("ZFS parameters must be finite"));
        }
        let mut v = [d / 3.0 + e, d / 3.0 - e, -2.0 * d / 3.0];
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > -min {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        // z: most negative; x: largest of the rest. Ties keep original order.
        let iz = (0..3)
            .rev()
            .min_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap())
            .unwrap();
        let rest: Vec<usize> = (0..3).filter(|&i| i != iz).collect();
        let (ix, iy) = if v[rest[1]] > v[rest[0]] {
            (rest[1], rest[0])
        } else {
            (rest[0], rest[1])
        };
        let mut p = Matrix3::zeros();
        p[(ix, 0)] = 1.0;
        p[(iy, 1)] = 1.0;
        p[(iz, 2)] = 1.0;
        if p.determinant() < 0.0 {
            p[(iz, 2)] = -1.0;
        }
        let zfs = ZfsParams {
            d: -1.5 * v[iz],
            e: 0.5 * (v[ix] - v[iy]),
        };
        Ok((zfs, p))
    }
}

/// Z-Y-Z Euler angles (rad). The rotation `R = Rz(alpha) Ry(beta) Rz(gamma)`
/// has the molecular axes as its columns in lab coordinates, so a lab-frame
/// vector maps to the molecular frame as `R^T v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Orientation {
    fn default() -> Self {
        Self::identity()
    }
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn ry(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn drz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn dry(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn wrap_2pi(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

impl Orientation {
    pub fn identity() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }

    /// Normalizes to `alpha, gamma in [0, 2pi)`, `beta in [0, pi]`.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
            return Err(invalid("Euler angles must be finite"));
        }
        let raw = Self { alpha, beta, gamma };
        Ok(Self::from_matrix(&raw.matrix()))
    }

    pub fn from_degrees(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        Self::new(alpha.to_radians(), beta.to_radians(), gamma.to_radians())
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [
            self.alpha.to_degrees(),
            self.beta.to_degrees(),
            self.gamma.to_degrees(),
        ]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rz(self.alpha) * ry(self.beta) * rz(self.gamma)
    }

    /// Partial derivatives of [`Orientation::matrix`] with respect to
    /// `(alpha, beta, gamma)`.
    pub fn matrix_derivatives(&self) -> [Matrix3<f64>; 3] {
        let (a, b, g) = (self.alpha, self.beta, self.gamma);
        [
            drz(a) * ry(b) * rz(g),
            rz(a) * dry(b) * rz(g),
            rz(a) * ry(b) * drz(g),
        ]
    }

    /// Extracts normalized Euler angles from a proper rotation matrix.
    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        let cb = r[(2, 2)].clamp(-1.0, 1.0);
        let beta = cb.acos();
        let sb = beta.sin();
        let (alpha, gamma) = if sb > 1e-12 {
            (
                r[(1, 2)].atan2(r[(0, 2)]),
                r[(2, 1)].atan2(-r[(2, 0)]),
            )
        } else if cb > 0.0 {
            (r[(1, 0)].atan2(r[(0, 0)]), 0.0)
        } else {
            ((-r[(0, 1)]).atan2(r[(1, 1)]), 0.0)
        };
        Self {
            alpha: wrap_2pi(alpha),
            beta,
            gamma: wrap_2pi(gamma),
        }
    }

    /// Lab-frame vector expressed in the molecular frame.
    pub fn to_molecular(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix().transpose() * v
    }

    /// Molecular-frame vector expressed in the lab frame.
    pub fn to_lab(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix() * v
    }

    /// Geodesic angle (rad) between two orientations.
    pub fn misorientation(&self, other: &Orientation) -> f64 {
        let rel = self.matrix().transpose() * other.matrix();
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Magnetic field in the lab frame, mT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub const ZERO: FieldVector = FieldVector {
        bx: 0.0,
        by: 0.0,
        bz: 0.0,
    };

    pub fn new(bx: f64, by: f64, bz: f64) -> Result<Self> {
        let f = Self { bx, by, bz };
        f.validate()?;
        Ok(f)
    }

    /// Field of magnitude `magnitude` along `direction` (need not be unit).
    pub fn along(direction: &Vector3<f64>, magnitude: f64) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("field direction must be a non-zero finite vector"));
        }
        let v = direction * (magnitude / n);
        Self::new(v.x, v.y, v.z)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()) {
            return Err(invalid("non-finite field component"));
        }
        if self.magnitude() >= MAX_FIELD_MT {
            return Err(invalid(format!(
                "field magnitude {} mT exceeds {} mT",
                self.magnitude(),
                MAX_FIELD_MT
            )));
        }
        Ok(())
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.bx, self.by, self.bz)
    }

    pub fn magnitude(&self) -> f64 {
        self.vector().norm()
    }
}

/// Triplet sublevels, labelled by their zero-field character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sublevel {
    Tx,
    Ty,
    Tz,
}

impl Sublevel {
    pub const ALL: [Sublevel; 3] = [Sublevel::Tx, Sublevel::Ty, Sublevel::Tz];

    /// Position in the ascending energy order of an [`EigenSystem`].
    pub fn energy_index(self) -> usize {
        match self {
            Sublevel::Tz => 0,
            Sublevel::Ty => 1,
            Sublevel::Tx => 2,
        }
    }

    /// Position in `(Tx, Ty, Tz)` order.
    pub fn index(self) -> usize {
        match self {
            Sublevel::Tx => 0,
            Sublevel::Ty => 1,
            Sublevel::Tz => 2,
        }
    }

    pub fn from_energy_index(i: usize) -> Option<Sublevel> {
        match i {
            0 => Some(Sublevel::Tz),
            1 => Some(Sublevel::Ty),
            2 => Some(Sublevel::Tx),
            _ => None,
        }
    }
}

/// Unordered pair of triplet sublevels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pair {
    #[serde(rename = "xy")]
    XY,
    #[serde(rename = "yz")]
    YZ,
    #[serde(rename = "xz")]
    XZ,
}

impl Pair {
    pub const ALL: [Pair; 3] = [Pair::XY, Pair::YZ, Pair::XZ];

    /// Upper and lower sublevel (upper first, by energy order).
    pub fn levels(self) -> (Sublevel, Sublevel) {
        match self {
            Pair::XY => (Sublevel::Tx, Sublevel::Ty),
            Pair::YZ => (Sublevel::Ty, Sublevel::Tz),
            Pair::XZ => (Sublevel::Tx, Sublevel::Tz),
        }
    }

    pub fn from_levels(a: Sublevel, b: Sublevel) -> Option<Pair> {
        use Sublevel::*;
        match (a.min(b), a.max(b)) {
            (Tx, Ty) => Some(Pair::XY),
            (Ty, Tz) => Some(Pair::YZ),
            (Tx, Tz) => Some(Pair::XZ),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Pair::XY => "xy",
            Pair::YZ => "yz",
            Pair::XZ => "xz",
        }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Pair {
    type Err = Error;

    /// Accepts `xy`, `Tx-Ty`, `TyTz`, `z-x` and similar spellings.
    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s
            .to_ascii_lowercase()
            .chars()
            .filter(|c| matches!(c, 'x' | 'y' | 'z'))
            .collect();
        let stripped: String = s
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !matches!(c, 't' | '-' | '_' | ' ' | '<' | '>'))
            .collect();
        if letters.len() != 2 || stripped.len() != 2 {
            return Err(invalid(format!("unknown sublevel pair '{s}'")));
        }
        let lvl = |c: char| match c {
            'x' => Sublevel::Tx,
            'y' => Sublevel::Ty,
            _ => Sublevel::Tz,
        };
        Pair::from_levels(lvl(letters[0]), lvl(letters[1]))
            .ok_or_else(|| invalid(format!("unknown sublevel pair '{s}'")))
    }
}

/// Sensor model: ZFS tensor, molecular orientation and electron g-factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletModel {
    pub zfs: ZfsParams,
    pub orientation: Orientation,
    pub g: f64,
}

impl TripletModel {
    /// Validates `g` and canonicalizes `(D, E)`, relabelling the molecular
    /// axes in `orientation` to match.
    pub fn new(d: f64, e: f64, orientation: Orientation, g: f64) -> Result<Self> {
        if !(1.5..=2.5).contains(&g) {
            return Err(invalid(format!("g-factor {g} outside [1.5, 2.5]")));
        }
        let (zfs, p) = ZfsParams::canonicalize(d, e)?;
        let orientation = Orientation::from_matrix(&(orientation.matrix() * p));
        Ok(Self {
            zfs,
            orientation,
            g,
        })
    }

    /// Model in the molecular frame (identity orientation), default g.
    pub fn with_zfs(d: f64, e: f64) -> Result<Self> {
        Self::new(d, e, Orientation::identity(), DEFAULT_G)
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    /// Electron gyromagnetic factor `g * muB/h`, MHz/mT.
    pub fn gamma_e(&self) -> f64 {
        self.g * BOHR_MHZ_PER_MT
    }

    pub fn validate(&self) -> Result<()> {
        if !(1.5..=2.5).contains(&self.g) {
            return Err(invalid(format!("g-factor {} outside [1.5, 2.5]", self.g)));
        }
        if !self.zfs.is_canonical() {
            return Err(invalid("ZFS parameters are not canonical"));
        }
        let o = &self.orientation;
        if !(o.alpha.is_finite() && o.beta.is_finite() && o.gamma.is_finite()) {
            return Err(invalid("non-finite orientation"));
        }
        Ok(())
    }
}

/// 3x3 Hermitian matrix in MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermitianMatrix3(Matrix3<Complex64>);

impl HermitianMatrix3 {
    /// Accepts `m` if it equals its adjoint to `1e-12` relative to its
    /// largest entry.
    pub fn new(m: Matrix3<Complex64>) -> Result<Self> {
        if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid("matrix has non-finite entries"));
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let dev = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > HERMITIAN_RTOL * scale {
            return Err(invalid(format!(
                "matrix is not Hermitian (deviation {dev:e}, scale {scale:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<Complex64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Ascending energies with orthonormal eigenvectors as matrix columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSystem {
    pub energies: [f64; 3],
    pub states: Matrix3<Complex64>,
}

impl EigenSystem {
    pub fn state(&self, i: usize) -> Vector3<Complex64> {
        self.states.column(i).into_owned()
    }

    /// Eigenvector for a sublevel under the energy-order labelling.
    pub fn sublevel_state(&self, s: Sublevel) -> Vector3<Complex64> {
        self.state(s.energy_index())
    }

    pub fn energy(&self, s: Sublevel) -> f64 {
        self.energies[s.energy_index()]
    }

    pub fn pair_frequency(&self, pair: Pair) -> f64 {
        let (a, b) = pair.levels();
        (self.energy(a) - self.energy(b)).abs()
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Spin-1 operators `(Sx, Sy, Sz)` in the `|+1, 0, -1>` basis.
pub fn spin_operators() -> [HermitianMatrix3; 3] {
    let r = FRAC_1_SQRT_2;
    let z = c(0.0);
    let sx = Matrix3::new(z, c(r), z, c(r), z, c(r), z, c(r), z);
    let i = Complex64::new(0.0, r);
    let sy = Matrix3::new(z, -i, z, i, z, -i, z, i, z);
    let sz = Matrix3::new(c(1.0), z, z, z, z, z, z, z, c(-1.0));
    [
        HermitianMatrix3(sx),
        HermitianMatrix3(sy),
        HermitianMatrix3(sz),
    ]
}

/// Zero-field eigenstates `(|Tx>, |Ty>, |Tz>)` in the `|+1, 0, -1>` basis.
pub fn zero_field_basis() -> [Vector3<Complex64>; 3] {
    let r = FRAC_1_SQRT_2;
    let z = c(0.0);
    [
        Vector3::new(c(-r), z, c(r)),
        Vector3::new(Complex64::new(0.0, r), z, Complex64::new(0.0, r)),
        Vector3::new(z, c(1.0), z),
    ]
}

/// `sum_k v_k S_k` for a real 3-vector `v`.
pub fn spin_projection(v: &Vector3<f64>) -> Matrix3<Complex64> {
    let [sx, sy, sz] = spin_operators();
    sx.0 * c(v.x) + sy.0 * c(v.y) + sz.0 * c(v.z)
}

/// Field-independent ZFS part, MHz.
pub fn zfs_matrix(zfs: &ZfsParams) -> Matrix3<Complex64> {
    let [sx, sy, sz] = spin_operators();
    let id = Matrix3::<Complex64>::identity();
    (sz.0 * sz.0 - id * c(2.0 / 3.0)) * c(zfs.d) - (sx.0 * sx.0 - sy.0 * sy.0) * c(zfs.e)
}

/// `H = D (Sz^2 - 2/3) - E (Sx^2 - Sy^2) + g muB/h (B_mol . S)` in MHz.
///
/// The rhombic term carries the sign that puts `Tx` above `Ty` for positive
/// E, matching the sublevel labelling described in the module docs.
pub fn build_hamiltonian(model: &TripletModel, field: &FieldVector) -> Result<HermitianMatrix3> {
    model.validate()?;
    field.validate()?;
    let b_mol = model.orientation.to_molecular(&field.vector());
    let h = zfs_matrix(&model.zfs) + spin_projection(&(b_mol * model.gamma_e()));
    let h = (h + h.adjoint()) * c(0.5);
    Ok(HermitianMatrix3(h))
}

/// Diagonalizes a Hermitian matrix; energies ascending.
pub fn eigensystem(h: &HermitianMatrix3) -> Result<EigenSystem> {
    let m = HermitianMatrix3::new(h.0)?;
    let eig = SymmetricEigen::new(m.0);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut energies = [0.0; 3];
    let mut states = Matrix3::zeros();
    for (k, &i) in order.iter().enumerate() {
        energies[k] = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        let v = v / c(v.norm());
        states.set_column(k, &v);
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numerical("eigen-decomposition failed".into()));
    }
    Ok(EigenSystem { energies, states })
}

/// Eigensystem of the sensor Hamiltonian at `field`.
pub fn solve(model: &TripletModel, field: &FieldVector) -> Result<EigenSystem> {
    eigensystem(&build_hamiltonian(model, field)?)
}

/// One line of a transition table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub pair: Pair,
    /// MHz.
    pub frequency: f64,
    /// `|<i| S . n |j>|^2` for the drive axis `n`.
    pub amplitude: f64,
}

/// Magnetic-dipole transition strengths between eigenstates for a lab-frame
/// drive direction; entry `(i, j)` uses energy-order indices.
pub fn transition_strengths(
    model: &TripletModel,
    eig: &EigenSystem,
    drive_axis: &Vector3<f64>,
) -> Matrix3<f64> {
    let n_mol = model.orientation.to_molecular(drive_axis);
    let op = spin_projection(&n_mol);
    let m = eig.states.adjoint() * op * eig.states;
    m.map(|z| z.norm_sqr())
}

/// All three transitions, sorted by frequency.
pub fn transition_table(
    model: &TripletModel,
    field: &FieldVector,
    drive_axis: &Vector3<f64>,
) -> Result<Vec<Transition>> {
    if !((drive_axis.norm() - 1.0).abs() < 1e-6) {
        return Err(invalid("drive axis must be a unit vector"));
    }
    let eig = solve(model, field)?;
    let strengths = transition_strengths(model, &eig, drive_axis);
    let mut table: Vec<Transition> = Pair::ALL
        .iter()
        .map(|&pair| {
            let (a, b) = pair.levels();
            let (i, j) = (a.energy_index(), b.energy_index());
            Transition {
                pair,
                frequency: (eig.energies[i] - eig.energies[j]).abs(),
                amplitude: strengths[(i, j)],
            }
        })
        .collect();
    table.sort_by(|a, b| a.frequency.partial_cmp(&b.frequency).unwrap());
    Ok(table)
}

/// Transition frequency of `pair` at `field`, MHz.
pub fn pair_frequency(model: &TripletModel, field: &FieldVector, pair: Pair) -> Result<f64> {
    Ok(solve(model, field)?.pair_frequency(pair))
}

/// Squared overlaps `|<eigen_i | T_a>|^2`; row `i` is the energy index,
/// column `a` the `(Tx, Ty, Tz)` index. Rows sum to one.
pub fn sublevel_character(eig: &EigenSystem) -> Matrix3<f64> {
    let basis = zero_field_basis();
    Matrix3::from_fn(|i, a| eig.state(i).dotc(&basis[a]).norm_sqr())
}

/// Rotation of `angle` about `axis` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
    *rot.matrix()
}

/// Ascending energies (MHz) for ZFS `zfs` and molecular-frame Zeeman vector
/// `b = gamma_e B_mol` (MHz), from the depressed cubic
/// `l^3 + p l + q = 0` with `p = -(X^2 + Y^2 + Z^2)/2 - |b|^2` and
/// `q = X bx^2 + Y by^2 + Z bz^2 - XYZ`.
///
/// Agrees with [`eigensystem`] to rounding away from exact degeneracies and
/// avoids any complex arithmetic.
pub fn cubic_energies(zfs: &ZfsParams, b: &Vector3<f64>) -> [f64; 3] {
    let x = zfs.principal_values();
    let (p, q) = cubic_coefficients(&x, b);
    let r2 = -p / 3.0;
    if r2 <= 0.0 {
        return [0.0; 3];
    }
    let r = r2.sqrt();
    let phi = (-q / (2.0 * r2 * r)).clamp(-1.0, 1.0).acos();
    let mut out = [
        2.0 * r * ((phi - 2.0 * TAU) / 3.0).cos(),
        2.0 * r * ((phi - TAU) / 3.0).cos(),
        2.0 * r * (phi / 3.0).cos(),
    ];
    for l in &mut out {
        let slope = 3.0 * *l * *l + p;
        if slope.abs() > 1e-9 * r2 {
            *l -= (*l * *l * *l + p * *l + q) / slope;
        }
    }
    out
}

pub(crate) fn cubic_coefficients(x: &[f64; 3], b: &Vector3<f64>) -> (f64, f64) {
    let p = -0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) - b.norm_squared();
    let q = x[0] * b.x * b.x + x[1] * b.y * b.y + x[2] * b.z * b.z - x[0] * x[1] * x[2];
    (p, q)
}
