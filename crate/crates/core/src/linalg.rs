//! Dense Cholesky factorization for the normal equations.

use nalgebra::{DMatrix, DVector};

/// Factorization hit a non-positive pivot; the matrix is not numerically SPD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotPositiveDefinite {
    pub column: usize,
    pub pivot: f64,
}

/// Lower-triangular factor `L` with `A = L L^T`. Only the lower triangle of
/// `a` is read.
pub fn cholesky_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>, NotPositiveDefinite> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky_factor needs a square matrix");
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(NotPositiveDefinite {
                column: j,
                pivot: d,
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `A x = b` for symmetric positive definite `A` via `L L^T`.
pub fn cholesky_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>, NotPositiveDefinite> {
    assert_eq!(a.nrows(), b.len(), "dimension mismatch in cholesky_solve");
    let l = cholesky_factor(a)?;
    let n = b.len();
    // forward: L y = b
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    // backward: L^T x = y
    let mut x = y;
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}
