//! Dense numeric helpers shared by the fitting and bound modules.

use nalgebra::{DMatrix, DVector};

/// Step for central differences: `cbrt(eps) * max(1, |v|)`.
pub fn fd_step(value: f64) -> f64 {
    f64::EPSILON.cbrt() * value.abs().max(1.0)
}

/// Central-difference Jacobian of `f` at `at`; columns follow the coordinates of `at`.
pub fn fd_jacobian<F>(f: F, at: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut columns = Vec::with_capacity(at.len());
    for j in 0..at.len() {
        let h = fd_step(at[j]);
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[j] += h;
        minus[j] -= h;
        // Use the representable step actually taken.
        let span = plus[j] - minus[j];
        columns.push((f(&plus) - f(&minus)) / span);
    }
    if columns.is_empty() {
        let rows = f(at).len();
        return DMatrix::zeros(rows, 0);
    }
    DMatrix::from_columns(&columns)
}

/// Moore-Penrose pseudoinverse with cutoff `max(m, n) * eps * sigma_max`.
///
/// Returns the pseudoinverse and the numerical rank.
pub fn pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * sigma_max;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut result = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            result += (v_t.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    (result, rank)
}

/// Largest singular value, i.e. the induced 2,2 norm.
pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 {
        return m.norm();
    }
    if m.nrows() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    if m.is_empty() {
        return 0.0;
    }
    if is_upper_triangular(m) {
        return m.diagonal().iter().fold(0.0_f64, |acc, d| acc.max(d.abs()));
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn is_upper_triangular(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == 0.0))
}
