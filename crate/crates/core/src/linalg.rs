//! Small dense linear algebra helpers shared across the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("mass matrix is not symmetric positive definite")]
    MassNotSpd,
    #[error("matrix is singular or near-singular")]
    Singular,
}

/// Generalized symmetric eigensolution `K v = lambda M v` with M symmetric
/// positive definite. Returns eigenvalues ascending with mass-normalized
/// eigenvectors as matrix columns (`V^T M V = I`).
pub fn generalized_eig(
    stiffness: &DMatrix<f64>,
    mass: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), LinalgError> {
    let chol: Cholesky<f64, Dyn> = Cholesky::new(mass.clone()).ok_or(LinalgError::MassNotSpd)?;
    let l = chol.l();
    // A = L^-1 K L^-T, symmetric
    let linv_k = l
        .clone()
        .solve_lower_triangular(stiffness)
        .ok_or(LinalgError::Singular)?;
    let a = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or(LinalgError::Singular)?;
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let n = mass.nrows();
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    let lt = l.transpose();
    for (col, &idx) in order.iter().enumerate() {
        values[col] = eig.eigenvalues[idx];
        let y = eig.eigenvectors.column(idx).into_owned();
        let v = lt
            .clone()
            .solve_upper_triangular(&y)
            .ok_or(LinalgError::Singular)?;
        vectors.set_column(col, &v);
    }
    Ok((values, vectors))
}

/// Solve the complex dynamic stiffness system
/// `(K - Omega^2 M + i Omega C) x = f`.
pub fn dynamic_solve(
    stiffness: &DMatrix<f64>,
    mass: &DMatrix<f64>,
    damping: &DMatrix<f64>,
    omega: f64,
    rhs: &DVector<Complex<f64>>,
) -> Result<DVector<Complex<f64>>, LinalgError> {
    let n = stiffness.nrows();
    let a = DMatrix::from_fn(n, n, |i, j| {
        Complex::new(
            stiffness[(i, j)] - omega * omega * mass[(i, j)],
            omega * damping[(i, j)],
        )
    });
    let lu = a.lu();
    lu.solve(rhs).ok_or(LinalgError::Singular)
}
