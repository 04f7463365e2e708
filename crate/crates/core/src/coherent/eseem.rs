use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::decoherence::{coherence_at, NoiseModel};
use super::{check_time_grid, CoherenceTrace};
use crate::error::{invalid, Error, Result};
use crate::par::{self, Execution};
use crate::spin::{self, FieldVector, Pair, TripletModel};

/// Proton gyromagnetic ratio, MHz/T.
pub const PROTON_GAMMA: f64 = 42.577478;
/// Deuteron gyromagnetic ratio, MHz/T.
pub const DEUTERON_GAMMA: f64 = 6.536;
/// Largest nuclear register handled by exact propagation.
pub const MAX_NUCLEI: usize = 4;

/// Spin-1/2 nucleus with a hyperfine tensor in the molecular frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearSpin {
    /// MHz/T.
    pub gamma: f64,
    /// MHz, rows index electron spin components.
    pub hyperfine: [[f64; 3]; 3],
}

impl NuclearSpin {
    pub fn new(gamma: f64, hyperfine: [[f64; 3]; 3]) -> Result<Self> {
        let n = Self { gamma, hyperfine };
        n.validate()?;
        Ok(n)
    }

    pub fn proton(hyperfine: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(PROTON_GAMMA, hyperfine)
    }

    /// Isotropic coupling `a` (MHz).
    pub fn isotropic(gamma: f64, a: f64) -> Result<Self> {
        Self::new(gamma, [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]])
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.hyperfine.iter().flatten().any(|a| !a.is_finite()) {
            return Err(invalid("nuclear gamma and hyperfine tensor must be finite"));
        }
        Ok(())
    }

    /// Same nucleus with gamma and hyperfine multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        out.gamma *= factor;
        for row in &mut out.hyperfine {
            for a in row {
                *a *= factor;
            }
        }
        out
    }

    fn tensor(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.hyperfine[i][j])
    }
}

type CMat = DMatrix<Complex64>;

fn to_dense(m: &Matrix3<Complex64>) -> CMat {
    CMat::from_fn(3, 3, |i, j| m[(i, j)])
}

fn pauli_halves() -> [CMat; 3] {
    let h = |re: f64, im: f64| Complex64::new(re, im);
    [
        CMat::from_row_slice(2, 2, &[h(0.0, 0.0), h(0.5, 0.0), h(0.5, 0.0), h(0.0, 0.0)]),
        CMat::from_row_slice(2, 2, &[h(0.0, 0.0), h(0.0, -0.5), h(0.0, 0.5), h(0.0, 0.0)]),
        CMat::from_row_slice(2, 2, &[h(0.5, 0.0), h(0.0, 0.0), h(0.0, 0.0), h(-0.5, 0.0)]),
    ]
}

/// Operator acting as `op` on nucleus `j` of `k`.
fn embed_nuclear(op: &CMat, j: usize, k: usize) -> CMat {
    let left = CMat::identity(1 << j, 1 << j);
    let right = CMat::identity(1 << (k - j - 1), 1 << (k - j - 1));
    left.kronecker(op).kronecker(&right)
}

struct EchoSystem {
    dim: usize,
    /// Eigenvalues of the full Hamiltonian, MHz.
    energies: DVector<f64>,
    /// Eigenvectors as columns.
    basis: CMat,
    /// Pulses and observable in the eigenbasis.
    pi: CMat,
    observable: CMat,
    /// Density matrix after the first pulse, eigenbasis.
    rho_start: CMat,
}

impl EchoSystem {
    fn build(model: &TripletModel, field: &FieldVector, nuclei: &[NuclearSpin], pair: Pair) -> Result<Self> {
        if nuclei.len() > MAX_NUCLEI {
            return Err(Error::Capacity(format!(
                "{} nuclei requested, at most {MAX_NUCLEI} supported",
                nuclei.len()
            )));
        }
        nuclei.iter().try_for_each(NuclearSpin::validate)?;
        let h_e = spin::build_hamiltonian(model, field)?;
        let eig = spin::eigensystem(&h_e)?;
        let k = nuclei.len();
        let n_dim = 1usize << k;
        let dim = 3 * n_dim;
        let id_n = CMat::identity(n_dim, n_dim);

        let mut h = to_dense(h_e.matrix()).kronecker(&id_n);
        let s_ops: Vec<CMat> = spin::spin_operators().iter().map(|s| to_dense(s.matrix())).collect();
        let i_ops = pauli_halves();
        let b_mol = model.orientation.to_molecular(&field.vector());
        let id_e = CMat::identity(3, 3);
        for (j, nuc) in nuclei.iter().enumerate() {
            let a = nuc.tensor();
            let nu = b_mol * (nuc.gamma * 1e-3);
            for (q, i_op) in i_ops.iter().enumerate() {
                let i_full = embed_nuclear(i_op, j, k);
                for (p, s_op) in s_ops.iter().enumerate() {
                    if a[(p, q)] != 0.0 {
                        h += s_op.kronecker(&i_full) * Complex64::from(a[(p, q)]);
                    }
                }
                if nu[q] != 0.0 {
                    h -= id_e.kronecker(&i_full) * Complex64::from(nu[q]);
                }
            }
        }
        let h = (&h + h.adjoint()) * Complex64::from(0.5);
        let decomposition = SymmetricEigen::new(h);
        let basis = decomposition.eigenvectors;
        let energies = decomposition.eigenvalues;
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numerical("eigen-decomposition failed".into()));
        }

        let (upper, lower) = pair.levels();
        let va = eig.sublevel_state(upper);
        let vb = eig.sublevel_state(lower);
        let ket = |v: &Vector3<Complex64>| CMat::from_fn(3, 1, |i, _| v[i]);
        let (ka, kb) = (ket(&va), ket(&vb));
        let x = &ka * kb.adjoint() + &kb * ka.adjoint();
        let p = &ka * ka.adjoint() + &kb * kb.adjoint();
        let rotation = |theta: f64| {
            let phi = 0.5 * theta;
            let r = CMat::identity(3, 3) - &p * Complex64::from(1.0 - phi.cos())
                - &x * Complex64::new(0.0, phi.sin());
            r.kronecker(&id_n)
        };
        let to_eigen = |m: &CMat| basis.adjoint() * m * &basis;
        let half_pi = to_eigen(&rotation(0.5 * PI));
        let pi = to_eigen(&rotation(PI));
        let observable = to_eigen(&(&ka * kb.adjoint()).kronecker(&id_n));
        let rho0 = to_eigen(&(&ka * ka.adjoint()).kronecker(&(id_n * Complex64::from(1.0 / n_dim as f64))));
        let rho_start = &half_pi * rho0 * half_pi.adjoint();
        Ok(Self {
            dim,
            energies,
            basis,
            pi,
            observable,
            rho_start,
        })
    }

    fn evolve(&self, rho: &CMat, tau: f64) -> CMat {
        let phases: Vec<Complex64> = self
            .energies
            .iter()
            .map(|e| Complex64::from_polar(1.0, -2.0 * PI * e * tau))
            .collect();
        CMat::from_fn(self.dim, self.dim, |i, j| rho[(i, j)] * phases[i] * phases[j].conj())
    }

    /// Density matrix at the echo, eigenbasis.
    fn echo(&self, tau: f64) -> CMat {
        let rho = self.evolve(&self.rho_start, tau);
        let rho = &self.pi * rho * self.pi.adjoint();
        self.evolve(&rho, tau)
    }

    fn coherence(&self, rho: &CMat) -> Complex64 {
        // Tr(rho O)
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += rho[(i, j)] * self.observable[(j, i)];
            }
        }
        acc
    }
}

/// Full electron-nuclear density matrix at the echo `2 tau` after the
/// pi/2 pulse, in the product basis `|m_s> (x) |nuclei>`.
pub fn echo_density_matrix(
    model: &TripletModel,
    field: &FieldVector,
    nuclei: &[NuclearSpin],
    pair: Pair,
    tau: f64,
) -> Result<DMatrix<Complex64>> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(invalid("tau must be finite and >= 0"));
    }
    let sys = EchoSystem::build(model, field, nuclei, pair)?;
    let rho = sys.echo(tau);
    Ok(&sys.basis * rho * sys.basis.adjoint())
}

/// Two-pulse echo amplitude versus `tau` (echo at `2 tau`), normalized to 1
/// at `tau = 0`, optionally damped by the Hahn coherence at `2 tau`.
pub fn hahn_echo_eseem(
    model: &TripletModel,
    field: &FieldVector,
    nuclei: &[NuclearSpin],
    pair: Pair,
    tau_grid: &[f64],
    noise: Option<&NoiseModel>,
) -> Result<CoherenceTrace> {
    hahn_echo_eseem_with(Execution::default(), model, field, nuclei, pair, tau_grid, noise)
}

pub fn hahn_echo_eseem_with(
    exec: Execution,
    model: &TripletModel,
    field: &FieldVector,
    nuclei: &[NuclearSpin],
    pair: Pair,
    tau_grid: &[f64],
    noise: Option<&NoiseModel>,
) -> Result<CoherenceTrace> {
    check_time_grid(tau_grid)?;
    if let Some(n) = noise {
        n.validate()?;
    }
    let sys = EchoSystem::build(model, field, nuclei, pair)?;
    let reference = sys.coherence(&sys.echo(0.0));
    if reference.norm() < 1e-12 {
        return Err(Error::Numerical("echo has no initial coherence".into()));
    }
    let values = par::try_map(exec, tau_grid, |&tau| -> Result<f64> {
        let raw = (sys.coherence(&sys.echo(tau)) / reference).re;
        let envelope = match noise {
            Some(n) => coherence_at(n, pair, 1, 2.0 * tau)?,
            None => 1.0,
        };
        Ok(raw.clamp(-1.0, 1.0) * envelope)
    })?;
    CoherenceTrace::new(tau_grid.iter().copied().zip(values).collect())
}

/// First-order nuclear precession frequencies (MHz) in the two electron
/// levels of `pair` (upper, lower).
pub fn nuclear_frequencies(
    model: &TripletModel,
    field: &FieldVector,
    nucleus: &NuclearSpin,
    pair: Pair,
) -> Result<(f64, f64)> {
    nucleus.validate()?;
    let eig = spin::solve(model, field)?;
    let ops = spin::spin_operators();
    let b_mol = model.orientation.to_molecular(&field.vector());
    let nu = b_mol * (nucleus.gamma * 1e-3);
    let a = nucleus.tensor();
    let freq = |s| {
        let v = eig.sublevel_state(s);
        let mean = Vector3::from_fn(|i, _| (v.adjoint() * ops[i].matrix() * v)[(0, 0)].re);
        (a.transpose() * mean - nu).norm()
    };
    let (upper, lower) = pair.levels();
    Ok((freq(upper), freq(lower)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TripletModel {
        TripletModel::with_zfs(1891.0, 459.0).unwrap()
    }

    fn field() -> FieldVector {
        FieldVector::new(0.0, 0.0, 10.0).unwrap()
    }

    #[test]
    fn no_nuclei_is_flat() {
        let tau: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let tr = hahn_echo_eseem(&model(), &field(), &[], Pair::YZ, &tau, None).unwrap();
        assert!(tr.signal().iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn zero_hyperfine_is_flat() {
        let tau: Vec<f64> = (0..40).map(|i| i as f64 * 0.13).collect();
        let n = NuclearSpin::isotropic(PROTON_GAMMA, 0.0).unwrap();
        let tr = hahn_echo_eseem(&model(), &field(), &[n, n], Pair::XZ, &tau, None).unwrap();
        assert!(tr.signal().iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn too_many_nuclei() {
        let n = NuclearSpin::isotropic(PROTON_GAMMA, 0.1).unwrap();
        let r = hahn_echo_eseem(&model(), &field(), &[n; 5], Pair::YZ, &[0.0], None);
        assert!(matches!(r, Err(Error::Capacity(_))));
    }

    #[test]
    fn echo_state_is_a_density_matrix() {
        let n1 = NuclearSpin::proton([[0.3, 0.1, 0.0], [0.1, -0.2, 0.05], [0.0, 0.05, 0.4]]).unwrap();
        let n2 = NuclearSpin::isotropic(DEUTERON_GAMMA, 0.2).unwrap();
        let rho = echo_density_matrix(&model(), &field(), &[n1, n2], Pair::YZ, 1.7).unwrap();
        let tr = rho.trace();
        assert!((tr.re - 1.0).abs() < 1e-9 && tr.im.abs() < 1e-9);
        let herm = (&rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(herm < 1e-10);
        let ev = SymmetricEigen::new((&rho + rho.adjoint()) * Complex64::from(0.5)).eigenvalues;
        assert!(ev.iter().all(|e| *e > -1e-10));
    }

    #[test]
    fn modulation_depth_reaches_signal() {
        let n = NuclearSpin::proton([[0.0, 0.0, 0.5], [0.0, 0.0, 0.0], [0.5, 0.0, 0.3]]).unwrap();
        let tau: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let tr = hahn_echo_eseem(&model(), &field(), &[n], Pair::YZ, &tau, None).unwrap();
        let min = tr.signal().into_iter().fold(1.0, f64::min);
        assert!(min < 1.0 - 1e-6);
        assert!(tr.signal().iter().all(|s| s.abs() <= 1.0 + 1e-9));
        assert!((tr.samples[0].1 - 1.0).abs() < 1e-12);
    }
}
