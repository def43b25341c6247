//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter added to every kernel self-matrix before factorization.
pub const JITTER: f64 = 1e-10;

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factor of a symmetric matrix; on failure the error carries the
/// smallest eigenvalue.
pub fn cholesky(m: DMatrix<f64>) -> Result<Chol> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => {
            let min_eigenvalue =
                if m.iter().all(|v| v.is_finite()) { m.symmetric_eigenvalues().min() } else { f64::NAN };
            Err(Error::NotPositiveDefinite { min_eigenvalue })
        }
    }
}

/// `log |A|` from the Cholesky factor of `A`.
pub fn log_det(c: &Chol) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `L^{-1} B` for the lower factor `L` of `c`.
pub fn solve_lower(c: &Chol, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    c.l_dirty().solve_lower_triangular_mut(&mut x);
    x
}

pub fn solve_lower_vec(c: &Chol, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    c.l_dirty().solve_lower_triangular_mut(&mut x);
    x
}

/// `L^{-T} B`.
pub fn solve_upper(c: &Chol, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    c.l_dirty().tr_solve_lower_triangular_mut(&mut x);
    x
}

pub fn solve_upper_vec(c: &Chol, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    c.l_dirty().tr_solve_lower_triangular_mut(&mut x);
    x
}

/// Explicit `L^{-1}`; products with it run as blocked GEMM, which beats
/// column-wise triangular solves for wide right-hand sides.
pub fn lower_inverse(c: &Chol) -> DMatrix<f64> {
    let l = c.l_dirty();
    let mut x = DMatrix::identity(l.nrows(), l.nrows());
    l.solve_lower_triangular_mut(&mut x);
    x.fill_upper_triangle(0.0, 1);
    x
}

/// Sum of the elementwise product `sum(A .* B)`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Adds `v` to the diagonal in place.
pub fn add_diag(m: &mut DMatrix<f64>, v: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += v;
    }
}

/// Squared column norms of `m`.
pub fn col_sq_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm_squared()))
}
