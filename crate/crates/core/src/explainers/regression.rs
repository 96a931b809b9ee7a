//! Weighted linear fits used by the surrogate explainers.

use nalgebra::{DMatrix, DVector};

use super::ExplainError;

/// Weighted ridge regression with an unpenalized intercept.
/// Returns `(intercept, coefficients)`.
pub(crate) fn weighted_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    lambda: f64,
) -> Result<(f64, DVector<f64>), ExplainError> {
    let total: f64 = w.sum();
    if !(total > 0.0) {
        return Err(ExplainError::SurrogateFit("sample weights sum to zero".into()));
    }
    let x_mean = x.transpose() * w / total;
    let y_mean = y.dot(w) / total;
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= x_mean.transpose();
    }
    let yc = y.add_scalar(-y_mean);
    let xw = DMatrix::from_fn(xc.nrows(), xc.ncols(), |i, j| xc[(i, j)] * w[i]);
    let mut gram = xw.transpose() * &xc;
    for j in 0..gram.ncols() {
        gram[(j, j)] += lambda;
    }
    let rhs = xw.transpose() * yc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| ExplainError::SurrogateFit("normal equations are not positive definite".into()))?;
    let coef = chol.solve(&rhs);
    let intercept = y_mean - x_mean.dot(&coef);
    Ok((intercept, coef))
}

/// Minimizes `sum_i w_i (y_i - x_i . b)^2` through an SVD of the row-scaled
/// design; rank-deficient problems get the minimum-norm solution.
pub(crate) fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>, ExplainError> {
    let sw = w.map(f64::sqrt);
    let xs = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let ys = y.component_mul(&sw);
    let svd = xs.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * x.nrows().max(x.ncols()) as f64;
    svd.solve(&ys, tol)
        .map_err(|e| ExplainError::SurrogateFit(e.to_string()))
}
