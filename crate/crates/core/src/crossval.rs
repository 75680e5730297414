//! K-fold cross-validated log-likelihood and the complexity estimates derived
//! from it.
//!
//! `ell_cv` is the summed held-out log-likelihood (a log-likelihood, not its
//! negative), so `p_hat = ell_m - ell_cv` is the optimism of the in-sample fit.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    bernoulli_loglik, gaussian_loglik_with_sigma, log_likelihood, ml_sigma, Dataset, Family,
};
use crate::diagnostics::Diagnostics;
use crate::error::{Error, Result};
use crate::learners::Learner;
use crate::seed::{self, tag};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub stratified: bool,
    /// Fold index of each datum.
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// A plan from explicit assignments; every fold in `0..k` must be used.
    pub fn from_assignments(assignments: Vec<usize>, k: usize) -> Result<Self> {
        let n = assignments.len();
        if k < 2 || k > n {
            return Err(Error::invalid(format!("fold count {k} outside [2, {n}]")));
        }
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            if a >= k {
                return Err(Error::invalid(format!(
                    "fold index {a} out of range for {k} folds"
                )));
            }
            sizes[a] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("every fold must hold at least one datum"));
        }
        Ok(Self {
            n,
            k,
            stratified: false,
            assignments,
            seed: 0,
        })
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Random fold assignment. With `y` given, folds are stratified on the two
/// classes: positive counts per fold differ by at most one, as do fold sizes.
pub fn make_folds(n: usize, k: usize, y: Option<&DVector<f64>>, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("fold count {k} outside [2, {n}]")));
    }
    let mut rng = seed::rng(seed);
    let order: Vec<usize> = match y {
        None => {
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            rows
        }
        Some(y) => {
            if y.len() != n {
                return Err(Error::invalid(format!(
                    "response has {} values for {n} rows",
                    y.len()
                )));
            }
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::CannotStratify("response is not binary".into()));
            }
            let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| y[i] == 1.0);
            if pos.len() < k || neg.len() < k {
                return Err(Error::CannotStratify(format!(
                    "{} positives and {} negatives for {k} folds",
                    pos.len(),
                    neg.len()
                )));
            }
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            pos.extend(neg);
            pos
        }
    };
    // random fold labels so the folds receiving remainders are random too
    let mut labels: Vec<usize> = (0..k).collect();
    labels.shuffle(&mut rng);
    let mut assignments = vec![0; n];
    for (m, &i) in order.iter().enumerate() {
        assignments[i] = labels[m % k];
    }
    Ok(FoldPlan {
        n,
        k,
        stratified: y.is_some(),
        assignments,
        seed,
    })
}

/// One cross-validation pass, or the mean over repeated passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEstimate {
    pub ell_cv: f64,
    pub deviance: f64,
    pub ell_m: f64,
    pub p_hat: f64,
    pub p_hat_c: f64,
    /// Standard error of `ell_cv` over repeats (0 for a single pass).
    pub ell_cv_se: f64,
    pub p_hat_se: f64,
    pub repeats: usize,
    /// Held-out fits plus one full-data fit per repeat.
    pub model_evals: u64,
    pub fold_evals: u64,
    /// Per-repeat `(ell_cv, ell_m)`.
    pub per_repeat: Vec<(f64, f64)>,
    pub diagnostics: Diagnostics,
}

/// Small-sample form of the complexity estimate:
/// `(ell_m - ell_cv)(n - 1) / (ell_m - ell_cv + n)`.
pub fn p_hat_corrected(ell_m: f64, ell_cv: f64, n: usize) -> f64 {
    let d = ell_m - ell_cv;
    d * (n as f64 - 1.0) / (d + n as f64)
}

impl CvEstimate {
    fn from_repeats(
        per_repeat: Vec<(f64, f64)>,
        n: usize,
        k: usize,
        diagnostics: Diagnostics,
    ) -> Self {
        let cv: Vec<f64> = per_repeat.iter().map(|r| r.0).collect();
        let m: Vec<f64> = per_repeat.iter().map(|r| r.1).collect();
        let p: Vec<f64> = per_repeat.iter().map(|r| r.1 - r.0).collect();
        let ell_cv = stats::mean(&cv);
        let ell_m = stats::mean(&m);
        let repeats = per_repeat.len();
        let spread = |v: &[f64]| if v.len() > 1 { stats::se(v) } else { 0.0 };
        Self {
            ell_cv,
            deviance: -2.0 * ell_cv,
            ell_m,
            p_hat: ell_m - ell_cv,
            p_hat_c: p_hat_corrected(ell_m, ell_cv, n),
            ell_cv_se: spread(&cv),
            p_hat_se: spread(&p),
            repeats,
            model_evals: (repeats * (k + 1)) as u64,
            fold_evals: (repeats * k) as u64,
            per_repeat,
            diagnostics,
        }
    }
}

/// Summed held-out log-likelihood over the folds of `plan` plus the
/// full-data log-likelihood. Gaussian held-out densities use the
/// maximum-likelihood sigma of the training fold.
pub fn cv_loglik(
    learner: &dyn Learner,
    data: &Dataset,
    plan: &FoldPlan,
    seed: u64,
) -> Result<CvEstimate> {
    let (pair, diagnostics) = cv_pass(learner, data, plan, seed)?;
    Ok(CvEstimate::from_repeats(
        vec![pair],
        data.n(),
        plan.k,
        diagnostics,
    ))
}

fn cv_pass(
    learner: &dyn Learner,
    data: &Dataset,
    plan: &FoldPlan,
    seed: u64,
) -> Result<((f64, f64), Diagnostics)> {
    if plan.n != data.n() {
        return Err(Error::invalid(format!(
            "fold plan covers {} rows, data has {}",
            plan.n,
            data.n()
        )));
    }
    let folds: Vec<(f64, Diagnostics)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| -> Result<(f64, Diagnostics)> {
            let train = data.subset(&plan.train_rows(fold))?;
            let test = data.subset(&plan.test_rows(fold))?;
            let fit = learner.fit(&train, seed::derive(seed, &[tag::FIT, fold as u64]))?;
            let mut diag = Diagnostics::new();
            diag.extend(fit.warnings());
            let mu = fit.expectation(test.x());
            let ll = match data.family() {
                Family::Gaussian => {
                    let sigma = ml_sigma(train.y().as_slice(), fit.fitted().as_slice());
                    gaussian_loglik_with_sigma(test.y().as_slice(), mu.as_slice(), sigma)?
                }
                Family::Bernoulli => bernoulli_loglik(test.y().as_slice(), mu.as_slice())?,
            };
            Ok((ll, diag))
        })
        .collect::<Result<_>>()?;
    let full = learner.fit(data, seed::derive(seed, &[tag::FIT, plan.k as u64]))?;
    let ell_m = log_likelihood(data.y().as_slice(), full.fitted().as_slice(), data.family())?;
    let mut diagnostics = Diagnostics::new();
    diagnostics.extend(full.warnings());
    let mut ell_cv = 0.0;
    for (ll, diag) in folds {
        ell_cv += ll;
        diagnostics.merge(&diag);
    }
    Ok(((ell_cv, ell_m), diagnostics))
}

/// Fold plan and fit seed used by repeat `r` of [`repeated_cv`].
pub fn repeat_seeds(seed: u64, r: usize) -> (u64, u64) {
    (
        seed::derive(seed, &[tag::FOLDS, r as u64]),
        seed::derive(seed, &[tag::FIT, r as u64]),
    )
}

/// `repeats` independent K-fold passes with fresh folds, stratified for
/// Bernoulli data.
pub fn repeated_cv(
    learner: &dyn Learner,
    data: &Dataset,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<CvEstimate> {
    if repeats < 1 {
        return Err(Error::invalid("at least one repeat is required"));
    }
    let strata = (data.family() == Family::Bernoulli).then(|| data.y());
    let passes: Vec<((f64, f64), Diagnostics)> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let (fold_seed, fit_seed) = repeat_seeds(seed, r);
            let plan = make_folds(data.n(), k, strata, fold_seed)?;
            cv_pass(learner, data, &plan, fit_seed)
        })
        .collect::<Result<_>>()?;
    let mut diagnostics = Diagnostics::new();
    let mut per_repeat = Vec::with_capacity(repeats);
    for (pair, diag) in passes {
        per_repeat.push(pair);
        diagnostics.merge(&diag);
    }
    Ok(CvEstimate::from_repeats(
        per_repeat,
        data.n(),
        k,
        diagnostics,
    ))
}
