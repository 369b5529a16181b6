//! Thin helpers over nalgebra's dense kernels: LU solves with condition
//! reporting, symmetric eigendecomposition, and small vector utilities.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solve A·x = b by dense LU with partial pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSystem(format!("{}x{} solve failed", a.nrows(), a.ncols())))
}

/// Solve A·X = B for a multi-column right-hand side.
pub fn lu_solve_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone().lu().solve(b).ok_or_else(|| {
        Error::SingularSystem(format!("{}x{} multi-rhs solve failed", a.nrows(), a.ncols()))
    })
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone().try_inverse().ok_or_else(|| {
        Error::SingularSystem(format!("{}x{} inverse failed", a.nrows(), a.ncols()))
    })
}

/// 1-norm condition number ‖A‖₁·‖A⁻¹‖₁ (∞ if singular).
pub fn condition_1(a: &DMatrix<f64>) -> f64 {
    match a.clone().try_inverse() {
        Some(inv) => norm_1(a) * norm_1(&inv),
        None => f64::INFINITY,
    }
}

/// Maximum absolute column sum.
pub fn norm_1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute entry.
pub fn norm_inf_mat(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

pub fn norm_2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigenvalues and orthonormal eigenvectors of a symmetric matrix.
/// Eigenvalues are returned sorted ascending with matching vector columns.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let se = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &se.eigenvectors.column(src));
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_known_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[5.0, 10.0]);
        let x = lu_solve(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_column_slice(&[1.0, 1.0]);
        assert!(matches!(lu_solve(&a, &b), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn condition_of_identity_is_one() {
        let a = DMatrix::<f64>::identity(4, 4);
        assert!((condition_1(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_eigen_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 5.0]);
        let (vals, vecs) = symmetric_eigen(&a);
        let lam = DMatrix::from_diagonal(&DVector::from_vec(vals.clone()));
        let recon = &vecs * lam * vecs.transpose();
        assert!(norm_inf_mat(&(&a - recon)) < 1e-10);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }
}
