//! Dense density-matrix engine: unitary propagation, product-operator
//! relaxation and the conditional probe-magnetization readout.
//!
//! Relaxation is phenomenological. For every spin, transverse components decay
//! as `exp(-t/T2)` and the longitudinal component as `exp(-t/T1)`; the map is
//! unital, so a full state relaxes toward `1/N` and a deviation state toward 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, I, ONE, ZERO};
use crate::spin_system::SpinSystem;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const POSITIVITY_TOL: f64 = 1e-10;
pub const UNITARY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    /// Trace-one positive operator.
    Full,
    /// Traceless part of an ensemble state.
    Deviation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    kind: StateKind,
    rho: CMat,
}

fn qubit_count(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "dimension {dim} is not a power of two"
        )));
    }
    Ok(dim.trailing_zeros() as usize)
}

impl DensityMatrix {
    /// Checked constructor for trace-one states.
    pub fn full(rho: CMat) -> Result<Self> {
        qubit_count(rho.nrows())?;
        let defect = linalg::hermitian_defect(&rho);
        if defect > HERMITIAN_TOL {
            return Err(Error::NonHermitian(defect));
        }
        let tr = linalg::trace(&rho);
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidConfig(format!("trace {tr} is not 1")));
        }
        let (vals, _) = linalg::eigh(&rho)?;
        if let Some(min) = vals.iter().copied().reduce(f64::min) {
            if min < -POSITIVITY_TOL {
                return Err(Error::InvalidConfig(format!("negative eigenvalue {min:e}")));
            }
        }
        Ok(DensityMatrix {
            kind: StateKind::Full,
            rho,
        })
    }

    /// Checked constructor for traceless deviation states.
    pub fn deviation(rho: CMat) -> Result<Self> {
        qubit_count(rho.nrows())?;
        let defect = linalg::hermitian_defect(&rho);
        if defect > HERMITIAN_TOL * linalg::max_abs(&rho).max(1.0) {
            return Err(Error::NonHermitian(defect));
        }
        let tr = linalg::trace(&rho);
        if tr.norm() > TRACE_TOL {
            return Err(Error::InvalidConfig(format!("deviation trace {tr} is not 0")));
        }
        Ok(DensityMatrix {
            kind: StateKind::Deviation,
            rho,
        })
    }

    /// Pure state `|ψ⟩⟨ψ|`.
    pub fn pure(psi: &[num_complex::Complex64]) -> Result<Self> {
        let k = linalg::ket(psi);
        Self::full(&k * k.adjoint())
    }

    pub(crate) fn with_matrix(&self, rho: CMat) -> Self {
        DensityMatrix {
            kind: self.kind,
            rho,
        }
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn matrix(&self) -> &CMat {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.rho.nrows().trailing_zeros() as usize
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        self.with_matrix(self.rho.scale(factor))
    }
}

/// Unitary operator checked to `UNITARY_TOL` at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryOp(CMat);

impl UnitaryOp {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let defect = linalg::unitarity_defect(&m);
        if defect > UNITARY_TOL {
            return Err(Error::InvalidConfig(format!(
                "matrix is not unitary (defect {defect:e})"
            )));
        }
        Ok(UnitaryOp(m))
    }

    /// Skips the unitarity check; for products of already-checked factors.
    pub(crate) fn new_unchecked(m: CMat) -> Self {
        UnitaryOp(m)
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryOp(linalg::identity(dim))
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn dagger(&self) -> Self {
        UnitaryOp(self.0.adjoint())
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &UnitaryOp) -> Self {
        UnitaryOp(&self.0 * &first.0)
    }

    /// `self ⊗ 1` on `extra` additional trailing qubits.
    pub fn extend(&self, extra: usize) -> Self {
        UnitaryOp(linalg::kron(&self.0, &linalg::identity(1 << extra)))
    }
}

/// `|0…0⟩⟨0…0| ⊗ X` on `n_qubits`, the last being the probe.
pub fn pps_deviation(n_qubits: usize) -> Result<DensityMatrix> {
    if n_qubits < 2 {
        return Err(Error::InvalidConfig(format!(
            "pseudo-pure state needs at least 2 qubits, got {n_qubits}"
        )));
    }
    let dim = 1usize << n_qubits;
    let mut rho = CMat::zeros(dim, dim);
    rho[(0, 1)] = ONE;
    rho[(1, 0)] = ONE;
    Ok(DensityMatrix {
        kind: StateKind::Deviation,
        rho,
    })
}

/// `exp(-i h t)` for Hermitian `h` (rad/s) and `t ≥ 0` seconds.
pub fn free_propagator(h: &CMat, t: f64) -> Result<UnitaryOp> {
    if !(t >= 0.0) {
        return Err(Error::InvalidConfig(format!("negative evolution time {t}")));
    }
    Ok(UnitaryOp(linalg::expm_hermitian(h, t)?))
}

pub fn apply_unitary(rho: &DensityMatrix, u: &UnitaryOp) -> Result<DensityMatrix> {
    if rho.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: u.dim(),
        });
    }
    Ok(rho.with_matrix(&u.0 * &rho.rho * u.0.adjoint()))
}

fn check_system(rho: &DensityMatrix, system: &SpinSystem) -> Result<()> {
    if rho.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: rho.dim(),
        });
    }
    Ok(())
}

/// Product-operator T1/T2 damping for `t` seconds, applied slot by slot.
pub fn apply_relaxation(
    rho: &DensityMatrix,
    t: f64,
    system: &SpinSystem,
) -> Result<DensityMatrix> {
    check_system(rho, system)?;
    if t == 0.0 {
        return Ok(rho.clone());
    }
    let n = system.len();
    let dim = rho.dim();
    let mut m = rho.rho.clone();
    for (slot, spin) in system.spins().iter().enumerate() {
        let mask = 1usize << (n - slot - 1);
        let f1 = (-t / spin.t1_s).exp();
        let f2 = (-t / spin.t2_s).exp();
        let keep = 0.5 * (1.0 + f1);
        let swap = 0.5 * (1.0 - f1);
        let old = m.clone();
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = if (i ^ j) & mask != 0 {
                    old[(i, j)] * f2
                } else {
                    old[(i, j)] * keep + old[(i ^ mask, j ^ mask)] * swap
                };
            }
        }
    }
    Ok(rho.with_matrix(m))
}

/// Row-major vectorization index of entry `(i, j)`.
#[inline]
fn vec_index(i: usize, j: usize, dim: usize) -> usize {
    i * dim + j
}

/// Generator of `dρ/dt = -i[h, ρ] + R(ρ)` acting on row-major `vec(ρ)`,
/// where `R` is the product-operator relaxation of `system`.
pub fn liouvillian(h: &CMat, system: &SpinSystem) -> Result<CMat> {
    let dim = system.dim();
    if h.nrows() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: h.nrows(),
        });
    }
    let n = system.len();
    let mut g = CMat::zeros(dim * dim, dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let row = vec_index(i, j, dim);
            for k in 0..dim {
                if h[(i, k)] != ZERO {
                    g[(row, vec_index(k, j, dim))] -= I * h[(i, k)];
                }
                if h[(k, j)] != ZERO {
                    g[(row, vec_index(i, k, dim))] += I * h[(k, j)];
                }
            }
            for (slot, spin) in system.spins().iter().enumerate() {
                let mask = 1usize << (n - slot - 1);
                if (i ^ j) & mask != 0 {
                    g[(row, row)] -= linalg::c(1.0 / spin.t2_s, 0.0);
                } else {
                    let half = 0.5 / spin.t1_s;
                    g[(row, row)] -= linalg::c(half, 0.0);
                    g[(row, vec_index(i ^ mask, j ^ mask, dim))] += linalg::c(half, 0.0);
                }
            }
        }
    }
    Ok(g)
}

/// Exact propagator of simultaneous free evolution and relaxation over a
/// fixed interval; build once and apply to many states.
#[derive(Clone, Debug)]
pub struct OpenPropagator {
    dim: usize,
    superop: CMat,
}

impl OpenPropagator {
    pub fn new(h: &CMat, t: f64, system: &SpinSystem) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::InvalidConfig(format!("negative evolution time {t}")));
        }
        let g = liouvillian(h, system)?;
        Ok(OpenPropagator {
            dim: system.dim(),
            superop: linalg::expm(&g.scale(t)),
        })
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: rho.dim(),
            });
        }
        let d = self.dim;
        let v = CMat::from_fn(d * d, 1, |r, _| rho.rho[(r / d, r % d)]);
        let out = &self.superop * v;
        let m = CMat::from_fn(d, d, |i, j| out[(vec_index(i, j, d), 0)]);
        // restore exact Hermiticity lost to rounding in the superoperator product
        let m = (&m + m.adjoint()).scale(0.5);
        Ok(rho.with_matrix(m))
    }
}

/// `Tr[ρ (|0…0⟩⟨0…0| ⊗ X)] / Tr[(|0…0⟩⟨0…0| ⊗ X)²]`, so that the reference
/// pseudo-pure state reads exactly 1.
pub fn measure_magnetization(rho: &DensityMatrix) -> Result<f64> {
    let n = qubit_count(rho.dim())?;
    if n < 2 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: rho.dim(),
        });
    }
    // Tr[ρ O] = ρ₀₁ + ρ₁₀ and Tr[O²] = 2
    let overlap = rho.rho[(0, 1)] + rho.rho[(1, 0)];
    Ok(0.5 * overlap.re)
}

/// `⟨0…0|ρ|0…0⟩`; the readout used when the probe is not simulated.
pub fn zero_population(rho: &DensityMatrix) -> f64 {
    rho.rho[(0, 0)].re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, kron, max_abs_diff, pauli_x, pauli_z};
    use crate::spin_system::Spin;
    use proptest::prelude::*;

    fn one_spin(t1: f64, t2: f64) -> SpinSystem {
        SpinSystem::new(vec![Spin::new("A", "13C", 0.0, t1, t2)], &[]).unwrap()
    }

    fn random_hermitian(seed: &[f64], dim: usize) -> CMat {
        let mut m = CMat::zeros(dim, dim);
        let mut it = seed.iter().cycle();
        for i in 0..dim {
            for j in i..dim {
                let re = *it.next().unwrap();
                let im = if i == j { 0.0 } else { *it.next().unwrap() };
                m[(i, j)] = c(re, im);
                m[(j, i)] = c(re, -im);
            }
        }
        m
    }

    #[test]
    fn pps_two_qubits() {
        let p = pps_deviation(2).unwrap();
        let mut want = CMat::zeros(4, 4);
        want[(0, 1)] = ONE;
        want[(1, 0)] = ONE;
        assert_eq!(p.matrix(), &want);
        assert_eq!(linalg::trace(p.matrix()), ZERO);
    }

    #[test]
    fn pps_three_qubits_is_tensor_product() {
        let p = pps_deviation(3).unwrap();
        let mut proj = CMat::zeros(4, 4);
        proj[(0, 0)] = ONE;
        assert_eq!(p.matrix(), &kron(&proj, &pauli_x()));
        assert!(pps_deviation(1).is_err());
    }

    #[test]
    fn free_propagator_diagonal_closed_form() {
        let d = [3.0, -1.5, 0.25, 7.0];
        let h = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            4,
            d.iter().map(|&x| c(x, 0.0)),
        ));
        let t = 0.37;
        let u = free_propagator(&h, t).unwrap();
        for k in 0..4 {
            assert!((u.matrix()[(k, k)] - c(0.0, -d[k] * t).exp()).norm() < 1e-14);
        }
        let id = free_propagator(&h, 0.0).unwrap();
        assert!(max_abs_diff(id.matrix(), &linalg::identity(4)) < 1e-15);
    }

    #[test]
    fn free_propagator_semigroup() {
        let h = random_hermitian(&[0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.9], 4);
        let half = free_propagator(&h, 0.6).unwrap();
        let full = free_propagator(&h, 1.2).unwrap();
        assert!(max_abs_diff(half.after(&half).matrix(), full.matrix()) < 1e-12);
    }

    #[test]
    fn free_propagator_rejects_bad_input() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 1)] = ONE;
        assert!(matches!(free_propagator(&m, 1.0), Err(Error::NonHermitian(_))));
        assert!(free_propagator(&pauli_z(), -1.0).is_err());
    }

    #[test]
    fn apply_unitary_identity_and_mismatch() {
        let p = pps_deviation(2).unwrap();
        assert_eq!(apply_unitary(&p, &UnitaryOp::identity(4)).unwrap(), p);
        assert!(apply_unitary(&p, &UnitaryOp::identity(8)).is_err());
    }

    #[test]
    fn apply_unitary_preserves_spectrum() {
        let h = random_hermitian(&[0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.9], 4);
        let u = free_propagator(&h, 0.8).unwrap();
        let rho = DensityMatrix::pure(&[c(0.6, 0.0), c(0.0, 0.8), ZERO, ZERO]).unwrap();
        let out = apply_unitary(&rho, &u).unwrap();
        let (mut a, _) = linalg::eigh(rho.matrix()).unwrap();
        let (mut b, _) = linalg::eigh(out.matrix()).unwrap();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((linalg::trace(out.matrix()) - ONE).norm() < 1e-12);
    }

    #[test]
    fn relaxation_single_spin_closed_form() {
        let sys = one_spin(2.0, 0.5);
        let x = DensityMatrix::deviation(pauli_x()).unwrap();
        let out = apply_relaxation(&x, 0.5, &sys).unwrap();
        assert!(max_abs_diff(out.matrix(), &pauli_x().scale((-1f64).exp())) < 1e-15);
        let z = DensityMatrix::deviation(pauli_z()).unwrap();
        let out = apply_relaxation(&z, 2.0, &sys).unwrap();
        assert!(max_abs_diff(out.matrix(), &pauli_z().scale((-1f64).exp())) < 1e-15);
        assert_eq!(apply_relaxation(&z, 0.0, &sys).unwrap(), z);
    }

    #[test]
    fn relaxation_full_state_goes_to_identity() {
        let sys = one_spin(1e-3, 1e-3);
        let rho = DensityMatrix::pure(&[ONE, ZERO]).unwrap();
        let out = apply_relaxation(&rho, 1.0, &sys).unwrap();
        assert!(max_abs_diff(out.matrix(), &linalg::identity(2).scale(0.5)) < 1e-12);
    }

    #[test]
    fn open_propagator_reduces_to_parts() {
        let sys = SpinSystem::two_spin_default();
        let h = crate::spin_system::build_hamiltonian(&sys, Default::default()).unwrap();
        let s = 0.5;
        let rho = DensityMatrix::pure(&[c(s, 0.0), c(s, 0.0), c(0.0, s), c(-s, 0.0)]).unwrap();
        let t = 1.3e-3;
        // relaxation only
        let zero_h = CMat::zeros(4, 4);
        let a = OpenPropagator::new(&zero_h, t, &sys).unwrap().apply(&rho).unwrap();
        let b = apply_relaxation(&rho, t, &sys).unwrap();
        assert!(max_abs_diff(a.matrix(), b.matrix()) < 1e-13);
        // Hamiltonian only, relaxation negligible
        let slow: Vec<Spin> = sys
            .spins()
            .iter()
            .map(|sp| Spin::new(&sp.label, &sp.species, sp.offset_hz, 1e30, 1e30))
            .collect();
        let frozen = SpinSystem::new(slow, &[(0, 1, sys.j_hz(0, 1))]).unwrap();
        let a = OpenPropagator::new(&h, t, &frozen).unwrap().apply(&rho).unwrap();
        let b = apply_unitary(&rho, &free_propagator(&h, t).unwrap()).unwrap();
        assert!(max_abs_diff(a.matrix(), b.matrix()) < 1e-12);
    }

    #[test]
    fn magnetization_examples() {
        assert_eq!(measure_magnetization(&pps_deviation(3).unwrap()).unwrap(), 1.0);
        let mut proj = CMat::zeros(4, 4);
        proj[(0, 0)] = ONE;
        let zz = DensityMatrix::deviation(kron(&proj, &pauli_z())).unwrap();
        assert_eq!(measure_magnetization(&zz).unwrap(), 0.0);
        let scaled = pps_deviation(3).unwrap().scaled(0.37);
        assert!((measure_magnetization(&scaled).unwrap() - 0.37).abs() < 1e-15);
        let one = DensityMatrix::deviation(pauli_x()).unwrap();
        assert!(measure_magnetization(&one).is_err());
    }

    proptest! {
        #[test]
        fn unitary_round_trip(vals in prop::collection::vec(-3.0f64..3.0, 16), t in 0.0f64..2.0) {
            let h = random_hermitian(&vals, 4);
            let u = free_propagator(&h, t).unwrap();
            let rho = DensityMatrix::deviation(random_hermitian(&vals[3..], 4) - linalg::identity(4).scale(
                linalg::trace(&random_hermitian(&vals[3..], 4)).re / 4.0)).unwrap();
            let back = apply_unitary(&apply_unitary(&rho, &u).unwrap(), &u.dagger()).unwrap();
            prop_assert!(max_abs_diff(back.matrix(), rho.matrix()) < 1e-12);
        }

        #[test]
        fn propagator_composition(vals in prop::collection::vec(-3.0f64..3.0, 16), t in 0.0f64..1.0, s in 0.0f64..1.0) {
            let h = random_hermitian(&vals, 4);
            let a = free_propagator(&h, t).unwrap();
            let b = free_propagator(&h, s).unwrap();
            let ab = free_propagator(&h, t + s).unwrap();
            prop_assert!(max_abs_diff(a.after(&b).matrix(), ab.matrix()) < 1e-12);
        }

        #[test]
        fn relaxation_never_grows_coherence(t in 0.0f64..10.0, t1 in 0.1f64..5.0, ratio in 0.01f64..2.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let sys = one_spin(t1, t1 * ratio);
            let mut m = CMat::zeros(2, 2);
            m[(0, 1)] = c(re, im);
            m[(1, 0)] = c(re, -im);
            let rho = DensityMatrix::deviation(m).unwrap();
            let out = apply_relaxation(&rho, t, &sys).unwrap();
            prop_assert!(out.matrix()[(0, 1)].norm() <= rho.matrix()[(0, 1)].norm());
        }

        #[test]
        fn relaxation_preserves_trace(t in 0.0f64..10.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let sys = SpinSystem::ttmsa_synthetic();
            let norm = (a * a + b * b).sqrt().max(1e-3);
            let mut psi = vec![ZERO; 8];
            psi[0] = c(a / norm, 0.0);
            psi[5] = c(0.0, b / norm);
            if a * a + b * b < 1e-6 { psi[0] = ONE; psi[5] = ZERO; }
            let rho = DensityMatrix::pure(&psi).unwrap();
            let out = apply_relaxation(&rho, t, &sys).unwrap();
            prop_assert!((linalg::trace(out.matrix()) - ONE).norm() < 1e-12);
        }

        #[test]
        fn magnetization_is_linear(vals in prop::collection::vec(-2.0f64..2.0, 40), k in -3.0f64..3.0) {
            let a = random_hermitian(&vals[..20], 8);
            let b = random_hermitian(&vals[20..], 8);
            let shift = |m: CMat| { let t = linalg::trace(&m).re / 8.0; m - linalg::identity(8).scale(t) };
            let (a, b) = (shift(a), shift(b));
            let ma = measure_magnetization(&DensityMatrix::deviation(a.clone()).unwrap()).unwrap();
            let mb = measure_magnetization(&DensityMatrix::deviation(b.clone()).unwrap()).unwrap();
            let sum = DensityMatrix::deviation(a.scale(k) + b).unwrap();
            let ms = measure_magnetization(&sum).unwrap();
            prop_assert!((ms - (k * ma + mb)).abs() < 1e-12);
        }
    }
}
