//! Small dense symmetric positive-definite solves.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Lower-triangular `L` with `L Lᵀ = a`. Fails on a non-positive pivot.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!("{:?} is not square", a.dim())));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let diag = a[[j, j]] - (0..j).map(|k| l[[j, k]] * l[[j, k]]).sum::<f64>();
        if diag.is_nan() || diag <= 0.0 || diag.is_infinite() {
            return Err(Error::SingularCovariance(j));
        }
        let pivot = diag.sqrt();
        l[[j, j]] = pivot;
        for i in j + 1..n {
            let s = a[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
            l[[i, j]] = s / pivot;
        }
    }
    Ok(l)
}

/// Solves `L y = b` by forward substitution.
pub fn solve_lower(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let s = b[i] - (0..i).map(|k| l[[i, k]] * y[k]).sum::<f64>();
        y[i] = s / l[[i, i]];
    }
    y
}
