//! Datasets, distribution families, log-likelihoods and the reference
//! simulators.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Clamp applied to Bernoulli expectations before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gaussian => f.write_str("gaussian"),
            Family::Bernoulli => f.write_str("bernoulli"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "bernoulli" | "binomial" | "binary" => Ok(Family::Bernoulli),
            other => Err(Error::invalid(format!("unknown family {other:?}"))),
        }
    }
}

/// Covariates, response and family.
///
/// The covariate matrix is shared behind an [`Arc`], so datasets that only
/// differ in their response (perturbation rounds, simulation replicates) are
/// cheap to build.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Arc<DMatrix<f64>>,
    y: DVector<f64>,
    family: Family,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, family: Family) -> Result<Self> {
        Self::from_shared(Arc::new(x), y, family)
    }

    pub fn from_shared(x: Arc<DMatrix<f64>>, y: DVector<f64>, family: Family) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::invalid(format!(
                "response has {n} values but design has {} rows",
                x.nrows()
            )));
        }
        if n < 2 {
            return Err(Error::invalid("a dataset needs at least 2 rows"));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % n, pos / n);
            return Err(Error::invalid(format!(
                "non-finite covariate at row {row}, column {col}"
            )));
        }
        validate_response(y.as_slice(), family)?;
        Ok(Self { x, y, family })
    }

    /// Same covariates, new response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::from_shared(Arc::clone(&self.x), y, self.family)
    }

    /// Rows `rows` of this dataset, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Self::new(x, y, self.family)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn shared_x(&self) -> Arc<DMatrix<f64>> {
        Arc::clone(&self.x)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of raw covariates.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn prevalence(&self) -> f64 {
        self.y.mean()
    }
}

fn validate_response(y: &[f64], family: Family) -> Result<()> {
    match family {
        Family::Gaussian => {
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite response at row {i}")));
            }
        }
        Family::Bernoulli => {
            if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid(format!(
                    "Bernoulli response at row {i} is {}, expected 0 or 1",
                    y[i]
                )));
            }
            let positives = y.iter().filter(|&&v| v == 1.0).count();
            if positives == 0 || positives == y.len() {
                return Err(Error::invalid(
                    "Bernoulli response must contain both classes",
                ));
            }
        }
    }
    Ok(())
}

/// Maximum-likelihood residual standard deviation, sqrt(RSS / n).
pub fn ml_sigma(y: &[f64], mu: &[f64]) -> f64 {
    let rss: f64 = y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    (rss / y.len() as f64).sqrt()
}

/// Sum of Gaussian log-densities with a fixed standard deviation.
pub fn gaussian_loglik_with_sigma(y: &[f64], mu: &[f64], sigma: f64) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::invalid("y and mu differ in length"));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::DegenerateSigma);
    }
    let var = sigma * sigma;
    let norm = -0.5 * (2.0 * PI * var).ln();
    Ok(y.iter()
        .zip(mu)
        .map(|(a, b)| norm - (a - b) * (a - b) / (2.0 * var))
        .sum())
}

/// Sum of Bernoulli log-probabilities with `mu` clamped into `[eps, 1 - eps]`.
pub fn bernoulli_loglik(y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::invalid("y and mu differ in length"));
    }
    Ok(y.iter()
        .zip(mu)
        .map(|(&yi, &m)| {
            let m = m.clamp(PROB_EPS, 1.0 - PROB_EPS);
            yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
        })
        .sum())
}

/// Log-likelihood of `y` under expectations `mu`.
///
/// Gaussian uses the maximum-likelihood plug-in sigma (RSS / n), so the value
/// is a maximised likelihood suitable for AIC-type criteria.
pub fn log_likelihood(y: &[f64], mu: &[f64], family: Family) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::invalid(format!(
            "y has {} values, mu has {}",
            y.len(),
            mu.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("log-likelihood of an empty sample"));
    }
    match family {
        Family::Gaussian => gaussian_loglik_with_sigma(y, mu, ml_sigma(y, mu)),
        Family::Bernoulli => bernoulli_loglik(y, mu),
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// A simulated dataset together with the generating conditional means.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    /// E[y | x] for each row (Gaussian mean or Bernoulli probability).
    pub mean: DVector<f64>,
    /// Regenerations needed to obtain both classes (Bernoulli only).
    pub retries: u32,
}

pub const GAUSSIAN_BETA: [f64; 5] = [-5.0, 5.0, -10.0, 10.0, 10.0];
pub const BERNOULLI_BETA: [f64; 5] = [-6.66, 5.0, -10.0, 10.0, 10.0];
pub const SIM_COVARIATES: usize = 4;

/// b0 + b1 x1 + b2 x1^2 + b3 x2 + b4 x3 x4
pub fn sim_linear_predictor(beta: &[f64; 5], x: &[f64]) -> f64 {
    beta[0] + beta[1] * x[0] + beta[2] * x[0] * x[0] + beta[3] * x[1] + beta[4] * x[2] * x[3]
}

fn uniform_covariates(n: usize, rng: &mut seed::Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, SIM_COVARIATES);
    for i in 0..n {
        for j in 0..SIM_COVARIATES {
            x[(i, j)] = rng.random::<f64>();
        }
    }
    x
}

fn row(x: &DMatrix<f64>, i: usize) -> [f64; SIM_COVARIATES] {
    std::array::from_fn(|j| x[(i, j)])
}

/// Gaussian simulation: four U(0,1) covariates, unit noise.
pub fn simulate_gaussian(n: usize, seed: u64) -> Result<Simulated> {
    if n < 2 {
        return Err(Error::invalid("simulation needs n >= 2"));
    }
    let mut rng = seed::rng(seed);
    let x = uniform_covariates(n, &mut rng);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mean = DVector::from_fn(n, |i, _| sim_linear_predictor(&GAUSSIAN_BETA, &row(&x, i)));
    let y = DVector::from_fn(n, |i, _| mean[i] + noise.sample(&mut rng));
    Ok(Simulated {
        data: Dataset::new(x, y, Family::Gaussian)?,
        mean,
        retries: 0,
    })
}

/// Bernoulli simulation through the logistic link. If a draw lacks one of the
/// classes the whole dataset is regenerated from a derived sub-seed.
pub fn simulate_bernoulli(n: usize, seed: u64) -> Result<Simulated> {
    if n < 2 {
        return Err(Error::invalid("simulation needs n >= 2"));
    }
    const MAX_RETRIES: u32 = 1000;
    for attempt in 0..=MAX_RETRIES {
        let s = if attempt == 0 {
            seed
        } else {
            seed::derive(seed, &[u64::from(attempt)])
        };
        let mut rng = seed::rng(s);
        let x = uniform_covariates(n, &mut rng);
        let mean = DVector::from_fn(n, |i, _| {
            logistic(sim_linear_predictor(&BERNOULLI_BETA, &row(&x, i)))
        });
        let y = DVector::from_fn(n, |i, _| {
            if rng.random::<f64>() < mean[i] {
                1.0
            } else {
                0.0
            }
        });
        let positives = y.iter().filter(|&&v| v == 1.0).count();
        if positives > 0 && positives < n {
            return Ok(Simulated {
                data: Dataset::new(x, y, Family::Bernoulli)?,
                mean,
                retries: attempt,
            });
        }
    }
    Err(Error::invalid("could not simulate both classes"))
}
