use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

/// Thin QR factors of a full-column-rank matrix.
pub(crate) struct ThinQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub(crate) fn thin_qr(z: &DMatrix<f64>) -> Result<ThinQr> {
    let (n, p) = z.shape();
    if n < p {
        return Err(Error::UnderdeterminedDesign { rows: n, cols: p });
    }
    let qr = z.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let rank = (0..p)
        .filter(|&j| r[(j, j)].abs() > RANK_TOL * scale.max(f64::MIN_POSITIVE))
        .count();
    if rank < p {
        return Err(Error::RankDeficient { cols: p, rank });
    }
    Ok(ThinQr { q: qr.q(), r })
}

impl ThinQr {
    /// Least-squares coefficients for response `y`.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.tr_mul(y);
        self.r
            .solve_upper_triangular(&qty)
            .expect("triangular factor checked for full rank")
    }
}

pub(crate) fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
