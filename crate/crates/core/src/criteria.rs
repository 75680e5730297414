//! AICc, Akaike weights, cross-validation weights and model comparison tables.

use serde::{Deserialize, Serialize};

use crate::crossval::CvEstimate;
use crate::error::{Error, Result};

/// Form of the small-sample term added to AIC.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AiccCorrection {
    /// `2p(p + 1) / (n - p - 1)`.
    #[default]
    Standard,
    /// `p(p + 1) / (n - p - 1)`, without the leading factor 2.
    Unscaled,
}

/// Sign convention for cross-validation weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvWeightSign {
    /// `w ∝ exp(ell_cv - max ell_cv)`: the best model gets the largest weight.
    #[default]
    BestFavoured,
    /// `w ∝ exp(max ell_cv - ell_cv)`: favours the worst model.
    Inverted,
}

/// `-2 ell + 2p + 2p(p + 1)/(n - p - 1)`.
pub fn aicc(ell: f64, p: f64, n: usize) -> Result<f64> {
    aicc_with(ell, p, n, AiccCorrection::Standard)
}

pub fn aicc_with(ell: f64, p: f64, n: usize, correction: AiccCorrection) -> Result<f64> {
    if !ell.is_finite() || !p.is_finite() {
        return Err(Error::invalid(
            "log-likelihood and complexity must be finite",
        ));
    }
    if p < 0.0 {
        return Err(Error::invalid(format!(
            "complexity must be non-negative, got {p}"
        )));
    }
    let denom = n as f64 - p - 1.0;
    if denom <= 0.0 {
        return Err(Error::CorrectionUndefined(denom));
    }
    let factor = match correction {
        AiccCorrection::Standard => 2.0,
        AiccCorrection::Unscaled => 1.0,
    };
    Ok(-2.0 * ell + 2.0 * p + factor * p * (p + 1.0) / denom)
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("weights need at least one model"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("weights need finite inputs"));
    }
    Ok(())
}

/// Normalised `exp(s_m - max s)`.
fn softmax(scores: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let top = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = scores.map(|s| (s - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

/// `w_m ∝ exp(-(aicc_m - min aicc) / 2)`.
pub fn akaike_weights(aicc_values: &[f64]) -> Result<Vec<f64>> {
    check_values(aicc_values)?;
    Ok(softmax(aicc_values.iter().map(|a| -0.5 * a)))
}

pub fn cv_weights(ell_cv_values: &[f64], sign: CvWeightSign) -> Result<Vec<f64>> {
    check_values(ell_cv_values)?;
    Ok(match sign {
        CvWeightSign::BestFavoured => softmax(ell_cv_values.iter().copied()),
        CvWeightSign::Inverted => softmax(ell_cv_values.iter().map(|l| -l)),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriteriaOptions {
    pub correction: AiccCorrection,
    pub cv_sign: CvWeightSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub ell_m: f64,
    /// GDF (or another complexity estimate) used as p in AICc.
    pub complexity: f64,
    pub aicc: f64,
    pub ell_cv: f64,
    pub cv_deviance: f64,
    pub w_aic: f64,
    pub w_cv: f64,
    pub aicc_per_datum: f64,
    pub cv_deviance_per_datum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub n: usize,
    pub options: CriteriaOptions,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side AICc and cross-validation table. `complexity[m]` and `cv[m]`
/// describe the model `names[m]`; `ell_m` is taken from the CV estimate's
/// full-data fit.
pub fn compare_models(
    names: &[String],
    complexity: &[f64],
    cv: &[CvEstimate],
    n: usize,
    options: CriteriaOptions,
) -> Result<ModelComparison> {
    if names.len() != complexity.len() || names.len() != cv.len() {
        return Err(Error::invalid(format!(
            "mismatched model lists: {} names, {} complexities, {} CV estimates",
            names.len(),
            complexity.len(),
            cv.len()
        )));
    }
    let aiccs = names
        .iter()
        .zip(complexity)
        .zip(cv)
        .map(|((name, &p), c)| {
            aicc_with(c.ell_m, p, n, options.correction)
                .map_err(|e| Error::invalid(format!("model {name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let ell_cvs: Vec<f64> = cv.iter().map(|c| c.ell_cv).collect();
    let w_aic = akaike_weights(&aiccs)?;
    let w_cv = cv_weights(&ell_cvs, options.cv_sign)?;
    let rows = (0..names.len())
        .map(|m| ComparisonRow {
            name: names[m].clone(),
            ell_m: cv[m].ell_m,
            complexity: complexity[m],
            aicc: aiccs[m],
            ell_cv: cv[m].ell_cv,
            cv_deviance: cv[m].deviance,
            w_aic: w_aic[m],
            w_cv: w_cv[m],
            aicc_per_datum: aiccs[m] / n as f64,
            cv_deviance_per_datum: cv[m].deviance / n as f64,
        })
        .collect();
    Ok(ModelComparison { n, options, rows })
}
