//! Small dense complex linear algebra helpers shared by the engine and GRAPE.
//!
//! Qubit slot 0 is the most significant bit of a basis index, so `|ab⟩` has
//! index `2a + b`. Pauli Z has eigenvalue +1 on `|0⟩`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Tolerance used when a matrix is checked for Hermiticity before diagonalization.
pub const HERMITIAN_TOL: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Embeds a single-qubit operator at `slot` of an `n`-qubit register.
pub fn embed(op: &CMat, slot: usize, n: usize) -> CMat {
    debug_assert!(slot < n);
    let left = identity(1 << slot);
    let right = identity(1 << (n - slot - 1));
    kron(&kron(&left, op), &right)
}

/// Diagonal operator `Z_slot` on `n` qubits without forming Kronecker products.
pub fn z_diagonal(slot: usize, n: usize) -> Vec<f64> {
    let mask = 1usize << (n - slot - 1);
    (0..1usize << n)
        .map(|i| if i & mask == 0 { 1.0 } else { -1.0 })
        .collect()
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diagonal().iter().sum()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest entry of `m - m†`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

/// Largest entry of `u u† - 1`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    max_abs_diff(&(u * u.adjoint()), &identity(u.nrows()))
}

/// Eigendecomposition of a Hermitian matrix. Returns real eigenvalues and the
/// unitary whose columns are the eigenvectors.
pub fn eigh(h: &CMat) -> Result<(Vec<f64>, CMat)> {
    let defect = hermitian_defect(h);
    let scale = max_abs(h).max(1.0);
    if defect > HERMITIAN_TOL * scale {
        return Err(Error::NonHermitian(defect));
    }
    let sym = (h + h.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

/// `exp(-i h t)` for Hermitian `h`.
pub fn expm_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    let (vals, vecs) = eigh(h)?;
    Ok(phase_conjugate(&vals, &vecs, t))
}

/// `V diag(exp(-i λ t)) V†`.
pub fn phase_conjugate(vals: &[f64], vecs: &CMat, t: f64) -> CMat {
    let mut scaled = vecs.clone();
    for (j, &lambda) in vals.iter().enumerate() {
        let ph = Complex64::from_polar(1.0, -lambda * t);
        for z in scaled.column_mut(j).iter_mut() {
            *z *= ph;
        }
    }
    scaled * vecs.adjoint()
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// General matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant (Higham 2005). Used for non-Hermitian generators such as the
/// relaxation superoperator.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.scale(0.5f64.powi(s));
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = PADE13;
    let inner_u = &a6 * (a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]));
    let u = &a * (inner_u + a6.scale(b[7]) + a4.scale(b[5]) + a2.scale(b[3]) + id.scale(b[1]));
    let inner_v = &a6 * (a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]));
    let v = inner_v + a6.scale(b[6]) + a4.scale(b[4]) + a2.scale(b[2]) + id.scale(b[0]);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Normalized column vector as an `n x 1` matrix.
pub fn ket(amps: &[Complex64]) -> CMat {
    CMat::from_column_slice(amps.len(), 1, amps)
}

/// Completes `first` (assumed unit norm) to a unitary whose first column is
/// `first`, by Gram–Schmidt against the standard basis in index order.
pub fn complete_to_unitary(first: &[Complex64]) -> CMat {
    let n = first.len();
    let mut cols: Vec<Vec<Complex64>> = vec![first.to_vec()];
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = vec![ZERO; n];
        v[e] = ONE;
        for _pass in 0..2 {
            for col in &cols {
                let proj: Complex64 = col.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (vi, ci) in v.iter_mut().zip(col) {
                    *vi -= proj * ci;
                }
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|z| z / norm).collect());
        }
    }
    CMat::from_fn(n, n, |i, j| cols[j][i])
}
