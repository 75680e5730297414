use nalgebra::{DMatrix, DVector};

use super::linalg::thin_qr;
use crate::error::{Error, Result};

/// The linear map from observed response to fitted values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSmoother {
    pub influence: DMatrix<f64>,
    pub trace: f64,
}

impl LinearSmoother {
    pub fn new(influence: DMatrix<f64>) -> Self {
        let trace = influence.trace();
        Self { influence, trace }
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.influence * y
    }
}

/// Quadratic penalty `lambda * b' S b` on the coefficients.
#[derive(Debug, Clone, Copy)]
pub struct Penalty<'a> {
    pub matrix: &'a DMatrix<f64>,
    pub lambda: f64,
}

/// Influence matrix `Z (Z'Z + lambda S)^-1 Z'`.
///
/// Without a penalty the projection is formed from a thin QR factorisation,
/// which keeps its trace equal to the column rank to machine precision.
pub fn hat_matrix(z: &DMatrix<f64>, penalty: Option<Penalty<'_>>) -> Result<LinearSmoother> {
    match penalty {
        None => {
            let qr = thin_qr(z).map_err(|e| match e {
                Error::RankDeficient { .. } => Error::Singular,
                other => other,
            })?;
            Ok(LinearSmoother::new(&qr.q * qr.q.transpose()))
        }
        Some(Penalty { matrix, lambda }) => {
            let p = z.ncols();
            if matrix.shape() != (p, p) {
                return Err(Error::invalid("penalty matrix does not match design width"));
            }
            if lambda.is_nan() || lambda < 0.0 {
                return Err(Error::invalid("smoothing parameter must be non-negative"));
            }
            let m = z.tr_mul(z) + matrix * lambda;
            let chol = m.cholesky().ok_or(Error::Singular)?;
            // Z M^-1 Z'
            let mz = chol.solve(&z.transpose());
            Ok(LinearSmoother::new(z * mz))
        }
    }
}
