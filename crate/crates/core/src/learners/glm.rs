use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{expand_columns, expanded_width, with_intercept};
use super::hat::{hat_matrix, LinearSmoother};
use super::linalg::{max_abs_diff, thin_qr};
use super::{clamp_expectation, Learner, LearnerKind, Predictor};
use crate::data::{logistic, Dataset, Family};
use crate::error::{Error, Result};

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 50;
const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmDesign {
    InterceptOnly,
    /// Intercept plus the raw covariates.
    Linear,
    /// Intercept, linear, quadratic and pairwise interaction terms.
    #[default]
    Expanded,
}

impl GlmDesign {
    pub fn width(self, d: usize) -> usize {
        match self {
            GlmDesign::InterceptOnly => 1,
            GlmDesign::Linear => d + 1,
            GlmDesign::Expanded => expanded_width(d),
        }
    }

    fn build(self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            GlmDesign::InterceptOnly => DMatrix::from_element(x.nrows(), 1, 1.0),
            GlmDesign::Linear => with_intercept(x),
            GlmDesign::Expanded => expand_columns(x),
        }
    }
}

/// Generalised linear model: least squares for Gaussian data, logistic
/// regression fitted by IRLS for Bernoulli data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Glm {
    pub design: GlmDesign,
}

impl Glm {
    pub fn new(design: GlmDesign) -> Self {
        Self { design }
    }

    pub fn expanded() -> Self {
        Self::new(GlmDesign::Expanded)
    }

    pub fn intercept_only() -> Self {
        Self::new(GlmDesign::InterceptOnly)
    }

    pub fn fit_glm(&self, data: &Dataset) -> Result<GlmFit> {
        let z = self.design.build(data.x());
        let (n, p) = z.shape();
        if n < p {
            return Err(Error::UnderdeterminedDesign { rows: n, cols: p });
        }
        match data.family() {
            Family::Gaussian => {
                let qr = thin_qr(&z)?;
                let coef = qr.solve(data.y());
                let fitted = &z * &coef;
                Ok(GlmFit {
                    design: self.design,
                    family: Family::Gaussian,
                    coef,
                    fitted,
                    z,
                    iterations: 0,
                    warnings: Vec::new(),
                })
            }
            Family::Bernoulli => irls(self.design, z, data.y()),
        }
    }
}

fn irls(design: GlmDesign, z: DMatrix<f64>, y: &DVector<f64>) -> Result<GlmFit> {
    let (n, p) = z.shape();
    // rank check once on the unweighted design
    thin_qr(&z)?;
    let prev = y.mean();
    let mut coef = DVector::zeros(p);
    coef[0] = (prev / (1.0 - prev)).ln();
    let mut eta = &z * &coef;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=IRLS_MAX_ITER {
        iterations = it;
        let mut wz = z.clone();
        let mut wy = DVector::zeros(n);
        for i in 0..n {
            let mu = logistic(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let sw = w.sqrt();
            let working = eta[i] + (y[i] - mu) / w;
            wz.row_mut(i).scale_mut(sw);
            wy[i] = working * sw;
        }
        let next = match thin_qr(&wz) {
            Ok(qr) => qr.solve(&wy),
            // weights collapsing to zero is the signature of separation
            Err(_) => return Err(Error::NoFiniteMle { norm: coef.norm() }),
        };
        let delta = max_abs_diff(&next, &coef);
        coef = next;
        if !coef.iter().all(|c| c.is_finite()) || coef.norm() > DIVERGENCE_NORM {
            return Err(Error::NoFiniteMle { norm: coef.norm() });
        }
        eta = &z * &coef;
        if delta < IRLS_TOL {
            converged = true;
            break;
        }
    }
    let mut warnings = Vec::new();
    if !converged {
        // Saturated linear predictors with unconverged coefficients mean
        // the classes are (quasi-)separated.
        if eta.amax() > 30.0 {
            return Err(Error::NoFiniteMle { norm: coef.norm() });
        }
        warnings.push(format!(
            "IRLS did not converge in {IRLS_MAX_ITER} iterations"
        ));
    }
    let fitted = clamp_expectation(Family::Bernoulli, eta.map(logistic));
    Ok(GlmFit {
        design,
        family: Family::Bernoulli,
        coef,
        fitted,
        z,
        iterations,
        warnings,
    })
}

impl Learner for Glm {
    fn name(&self) -> &'static str {
        "glm"
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::Glm
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn fit(&self, data: &Dataset, _seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.fit_glm(data)?))
    }
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    design: GlmDesign,
    family: Family,
    pub coef: DVector<f64>,
    fitted: DVector<f64>,
    z: DMatrix<f64>,
    pub iterations: usize,
    warnings: Vec<String>,
}

impl Predictor for GlmFit {
    fn expectation(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let eta = self.design.build(x) * &self.coef;
        match self.family {
            Family::Gaussian => eta,
            Family::Bernoulli => clamp_expectation(Family::Bernoulli, eta.map(logistic)),
        }
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    fn self_dof(&self) -> Option<f64> {
        Some(self.coef.len() as f64)
    }

    fn linear_smoother(&self) -> Option<LinearSmoother> {
        match self.family {
            Family::Gaussian => hat_matrix(&self.z, None).ok(),
            Family::Bernoulli => None,
        }
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}
