//! Small dense linear-algebra helpers: symmetric matrix functions via
//! eigendecomposition, commutation matrices, and vec/unvec utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Apply `f` to the eigenvalues of a symmetric matrix: `Q f(Λ) Q'`.
pub fn sym_eig_fn<F: Fn(f64) -> f64>(m: &DMatrix<f64>, f: F) -> DMatrix<f64> {
    debug_assert!(m.is_square());
    let eig = m.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let mut d = DMatrix::zeros(m.nrows(), m.nrows());
    for i in 0..m.nrows() {
        d[(i, i)] = f(eig.eigenvalues[i]);
    }
    q * d * q.transpose()
}

/// Symmetric matrix exponential.
pub fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eig_fn(m, f64::exp)
}

/// Symmetric matrix logarithm; requires positive-definite input.
pub fn sym_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::Singular("matrix logarithm of a non-PD matrix".into()));
    }
    Ok(sym_eig_fn(m, f64::ln))
}

/// Symmetric positive-definite inverse square root with a relative eigenvalue
/// floor: eigenvalues below `floor_rel · λ_max` are treated as singular.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, floor_rel: f64) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = floor_rel * lmax;
    if eig.eigenvalues.iter().any(|&l| l <= floor) {
        return Err(Error::Singular(format!(
            "eigenvalue below relative floor {floor_rel:.1e} in inverse square root"
        )));
    }
    let q = &eig.eigenvectors;
    let mut d = DMatrix::zeros(m.nrows(), m.nrows());
    for i in 0..m.nrows() {
        d[(i, i)] = 1.0 / eig.eigenvalues[i].sqrt();
    }
    Ok(q * d * q.transpose())
}

/// Symmetric positive-semidefinite square root.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eig_fn(m, |l| l.max(0.0).sqrt())
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for an `r × c` matrix.
pub fn unvec(v: &DVector<f64>, r: usize, c: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), r * c);
    DMatrix::from_column_slice(r, c, v.as_slice())
}

/// Commutation matrix `K_{m,n}` (mn × mn): `K_{m,n} vec(A) = vec(A')` for
/// `A` of size m × n.
pub fn commutation_matrix(m: usize, n: usize) -> DMatrix<f64> {
    let mn = m * n;
    let mut k = DMatrix::zeros(mn, mn);
    for i in 0..m {
        for j in 0..n {
            // vec(A) index of A[i,j] is j*m + i; vec(A') index of A'[j,i] is i*n + j.
            k[(i * n + j, j * m + i)] = 1.0;
        }
    }
    k
}

/// Fréchet derivative of the symmetric matrix exponential at `gamma` applied to
/// the symmetric direction `h`: uses the Daleckii–Krein formula in the
/// eigenbasis, with divided differences of exp.
pub fn sym_exp_frechet(gamma: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = gamma.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let ht = q.transpose() * h * q;
    let n = gamma.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let li = eig.eigenvalues[i];
            let lj = eig.eigenvalues[j];
            let g = if (li - lj).abs() < 1e-12 * (1.0 + li.abs().max(lj.abs())) {
                ((li + lj) / 2.0).exp()
            } else {
                (li.exp() - lj.exp()) / (li - lj)
            };
            out[(i, j)] = g * ht[(i, j)];
        }
    }
    q * out * q.transpose()
}
