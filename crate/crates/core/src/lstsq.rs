use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Columns whose scaled singular value falls below this fraction of the
/// largest are treated as linearly dependent.
pub const RANK_TOL: f64 = 1e-10;

type Svd = nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>;

/// SVD of the design with unit-norm columns, plus the column norms.
fn equilibrated_svd(design: &DMatrix<f64>) -> Result<(Svd, Vec<f64>)> {
    let (rows, cols) = design.shape();
    if rows < cols {
        return Err(Error::Rank(format!(
            "{rows} samples cannot determine {cols} coefficients"
        )));
    }
    let scale: Vec<f64> = design
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = design.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * RANK_TOL {
        return Err(Error::Rank(format!(
            "design matrix is rank deficient (scaled singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    Ok((svd, scale))
}

/// Ordinary least squares `min ‖X·c − y‖` with column equilibration.
///
/// Fails with a rank error when there are fewer rows than columns or the
/// equilibrated design matrix is numerically rank deficient.
pub fn solve(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if design.nrows() != y.len() {
        return Err(Error::Value(format!(
            "design has {} rows but {} observations were given",
            design.nrows(),
            y.len()
        )));
    }
    let (svd, scale) = equilibrated_svd(design)?;
    let coeffs = svd
        .solve(y, 0.0)
        .map_err(|e| Error::Rank(e.to_string()))?;
    Ok(DVector::from_iterator(
        scale.len(),
        coeffs.iter().zip(&scale).map(|(c, s)| c / s),
    ))
}

/// Left pseudo-inverse `P` of a full-column-rank design, so `P·y` solves the
/// least-squares problem for any right-hand side `y`.
pub fn pseudo_inverse(design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (svd, scale) = equilibrated_svd(design)?;
    let mut pinv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::Rank(e.to_string()))?;
    for (i, mut row) in pinv.row_iter_mut().enumerate() {
        row /= scale[i];
    }
    Ok(pinv)
}
