//! Sparse and dense linear algebra used by the physics modules.

pub mod banded;
pub mod chebyshev;
pub mod csr;
pub mod lanczos;

pub use banded::{bandwidth, rcm, BandedLu};
pub use chebyshev::{bessel_j_sequence, chebyshev_step, propagate};
pub use csr::CsrMatrix;
pub use lanczos::{shift_invert_lanczos, ShiftInvertOptions};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

/// A Hermitian operator that can act on complex vectors.
pub trait HermitianOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = H x`.
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);
    /// Interval guaranteed to contain the spectrum.
    fn spectral_bounds(&self) -> (f64, f64);
}

/// All eigenpairs of a dense real symmetric matrix, sorted ascending.
/// Columns of the returned matrix are the eigenvectors.
pub fn dense_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// All eigenpairs of a dense Hermitian matrix, sorted ascending.
pub fn dense_hermitian_eigen(m: DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}
