// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering vectors and coefficients.

use crate::error::{GlpError, Result};
use crate::tensor::Matrix;

/// Mean activation norm at the steering layer of a reference 8B-parameter
/// model. Kept as a constant for scale comparisons; never recomputed here.
pub const REFERENCE_MEAN_ACT_NORM: f64 = 11.6;

/// `mean(pos) − mean(neg)`.
pub fn diffmean_vector(acts_pos: &Matrix, acts_neg: &Matrix) -> Result<Vec<f64>> {
    if acts_pos.rows() == 0 || acts_neg.rows() == 0 {
        return Err(GlpError::InvalidArgument("diffmean needs two nonempty sets".into()));
    }
    if acts_pos.cols() != acts_neg.cols() {
        return Err(GlpError::shape(
            "diffmean_vector",
            format!("{} vs {} columns", acts_pos.cols(), acts_neg.cols()),
        ));
    }
    Ok(acts_pos
        .col_means()
        .iter()
        .zip(acts_neg.col_means())
        .map(|(p, n)| p - n)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteeringCoefficient {
    pub relative: f64,
    pub mean_norm: f64,
    pub alpha: f64,
}

/// `alpha = r · mean row norm of validation_acts`.
pub fn relative_coefficient(r: f64, validation_acts: &Matrix) -> Result<SteeringCoefficient> {
    if validation_acts.rows() == 0 {
        return Err(GlpError::InvalidArgument("no validation activations".into()));
    }
    let norms = validation_acts.row_norms();
    let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    Ok(SteeringCoefficient {
        relative: r,
        mean_norm,
        alpha: r * mean_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diffmean_cases() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(diffmean_vector(&a, &a).unwrap(), vec![0.0, 0.0]);
        let u = Matrix::from_rows(&[[1.0, 5.0]]);
        let v = Matrix::from_rows(&[[0.5, -1.0]]);
        assert_eq!(diffmean_vector(&u, &v).unwrap(), vec![0.5, 6.0]);
        assert_eq!(diffmean_vector(&v, &u).unwrap(), vec![-0.5, -6.0]);
        assert!(diffmean_vector(&Matrix::zeros(0, 2), &u).is_err());
    }

    #[test]
    fn coefficient_cases() {
        let unit = Matrix::from_rows(&[[1.0, 0.0], [0.6, 0.8]]);
        assert_eq!(relative_coefficient(0.0, &unit).unwrap().alpha, 0.0);
        let c = relative_coefficient(2.5, &unit).unwrap();
        assert!((c.alpha - 2.5).abs() < 1e-15);
        assert!((c.alpha / c.relative - c.mean_norm).abs() < 1e-15);
    }
}
