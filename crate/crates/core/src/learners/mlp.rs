use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{clamp_expectation, Learner, LearnerKind, Predictor};
use crate::data::{logistic, Dataset, Family};
use crate::error::{Error, Result};
use crate::seed;

const INIT_RANGE: f64 = 0.7;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

/// Single-hidden-layer perceptron with logistic hidden units and weight decay.
///
/// Inputs are standardized with the training means and standard deviations.
/// The output unit is linear for Gaussian responses and logistic for
/// Bernoulli responses, trained on squared error and cross-entropy
/// respectively. Training is deterministic full-batch gradient descent, so the
/// seed only enters through the initial weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mlp {
    pub hidden: usize,
    pub decay: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for Mlp {
    fn default() -> Self {
        Self {
            hidden: 7,
            decay: 0.03,
            max_iter: 2000,
            grad_tol: 1e-5,
        }
    }
}

/// Penalized training loss as a function of the flattened parameter vector.
///
/// Layout: input weights (hidden x d, row-major by unit), hidden biases,
/// output weights, output bias. Biases are not penalized.
pub struct MlpObjective {
    xs: DMatrix<f64>,
    y: Vec<f64>,
    family: Family,
    hidden: usize,
    decay: f64,
}

impl MlpObjective {
    pub fn new(data: &Dataset, hidden: usize, decay: f64) -> Result<Self> {
        if hidden < 1 {
            return Err(Error::invalid("hidden must be at least 1"));
        }
        if !(decay >= 0.0 && decay.is_finite()) {
            return Err(Error::invalid(format!(
                "decay must be non-negative, got {decay}"
            )));
        }
        let (_, _, xs) = standardize(data.x());
        Ok(Self {
            xs,
            y: data.y().iter().copied().collect(),
            family: data.family(),
            hidden,
            decay,
        })
    }

    pub fn n_params(&self) -> usize {
        n_params(self.hidden, self.xs.ncols())
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, None)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.evaluate(theta, Some(&mut g));
        g
    }

    fn evaluate(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (h, d) = (self.hidden, self.xs.ncols());
        let net = Net::view(theta, h, d);
        let mut loss = 0.0;
        let mut act = vec![0.0; h];
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        for i in 0..self.xs.nrows() {
            let out = net.forward(&self.xs, i, &mut act);
            let yi = self.y[i];
            let dout = match self.family {
                Family::Gaussian => {
                    let r = out - yi;
                    loss += r * r;
                    2.0 * r
                }
                Family::Bernoulli => {
                    loss += out.max(0.0) + (-out.abs()).exp().ln_1p() - yi * out;
                    logistic(out) - yi
                }
            };
            if let Some(g) = grad.as_deref_mut() {
                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h);
                gb2[0] += dout;
                for j in 0..h {
                    gw2[j] += dout * act[j];
                    let delta = dout * net.w2[j] * act[j] * (1.0 - act[j]);
                    gb1[j] += delta;
                    for c in 0..d {
                        gw1[j * d + c] += delta * self.xs[(i, c)];
                    }
                }
            }
        }
        let mut penalty = 0.0;
        for &w in net.w1.iter().chain(net.w2) {
            penalty += w * w;
        }
        if let Some(g) = grad {
            for k in 0..h * d {
                g[k] += 2.0 * self.decay * theta[k];
            }
            for j in 0..h {
                let k = h * d + h + j;
                g[k] += 2.0 * self.decay * theta[k];
            }
        }
        loss + self.decay * penalty
    }
}

fn n_params(hidden: usize, d: usize) -> usize {
    hidden * d + 2 * hidden + 1
}

struct Net<'a> {
    d: usize,
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: f64,
}

impl<'a> Net<'a> {
    fn view(theta: &'a [f64], h: usize, d: usize) -> Self {
        let (w1, rest) = theta.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        Self {
            d,
            w1,
            b1,
            w2,
            b2: b2[0],
        }
    }

    /// Output-unit input (linear predictor) for row `i`; fills hidden activations.
    fn forward(&self, xs: &DMatrix<f64>, i: usize, act: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for (j, a) in act.iter_mut().enumerate() {
            let mut z = self.b1[j];
            for c in 0..self.d {
                z += self.w1[j * self.d + c] * xs[(i, c)];
            }
            *a = logistic(z);
            out += self.w2[j] * *a;
        }
        out
    }
}

fn standardize(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let sds: Vec<f64> = x
        .column_iter()
        .zip(&means)
        .map(|(c, m)| {
            let v = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let xs = apply_scaling(x, &means, &sds);
    (means, sds, xs)
}

fn apply_scaling(x: &DMatrix<f64>, means: &[f64], sds: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - means[j]) / sds[j])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl Mlp {
    pub fn fit_mlp(&self, data: &Dataset, seed: u64) -> Result<MlpFit> {
        let objective = MlpObjective::new(data, self.hidden, self.decay)?;
        let (means, sds, _) = standardize(data.x());
        let mut rng = seed::rng(seed::derive(seed, &[seed::tag::FIT]));
        let mut theta: Vec<f64> = (0..objective.n_params())
            .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
            .collect();

        let mut value = objective.value(&theta);
        let mut grad = objective.gradient(&theta);
        let mut step = 1.0 / norm(&grad).max(1.0);
        let mut converged = norm(&grad) < self.grad_tol;
        let mut iterations = 0;
        while !converged && iterations < self.max_iter {
            iterations += 1;
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            let mut t = step;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACK {
                let trial: Vec<f64> = theta.iter().zip(&grad).map(|(p, g)| p - t * g).collect();
                let v = objective.value(&trial);
                if v.is_finite() && v <= value - ARMIJO * t * g2 {
                    accepted = Some((trial, v));
                    break;
                }
                t *= 0.5;
            }
            let Some((next, next_value)) = accepted else {
                break;
            };
            let next_grad = objective.gradient(&next);
            // Barzilai-Borwein step for the next trial
            let (mut sy, mut ss) = (0.0, 0.0);
            for k in 0..theta.len() {
                let s = next[k] - theta[k];
                sy += s * (next_grad[k] - grad[k]);
                ss += s * s;
            }
            step = if sy > 0.0 { ss / sy } else { t * 2.0 };
            theta = next;
            value = next_value;
            grad = next_grad;
            converged = norm(&grad) < self.grad_tol;
        }

        let mut warnings = Vec::new();
        if !converged {
            warnings.push(format!(
                "network training stopped after {iterations} iterations with gradient norm {:.3e}",
                norm(&grad)
            ));
        }
        let mut fit = MlpFit {
            family: data.family(),
            hidden: self.hidden,
            means,
            sds,
            theta,
            fitted: DVector::zeros(0),
            objective: value,
            iterations,
            warnings,
        };
        fit.fitted = fit.expectation(data.x());
        Ok(fit)
    }
}

impl Learner for Mlp {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::Mlp
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.fit_mlp(data, seed)?))
    }
}

pub struct MlpFit {
    family: Family,
    hidden: usize,
    means: Vec<f64>,
    sds: Vec<f64>,
    theta: Vec<f64>,
    fitted: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    warnings: Vec<String>,
}

impl MlpFit {
    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }
}

impl Predictor for MlpFit {
    fn expectation(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let xs = apply_scaling(x, &self.means, &self.sds);
        let net = Net::view(&self.theta, self.hidden, xs.ncols());
        let mut act = vec![0.0; self.hidden];
        let raw = DVector::from_fn(xs.nrows(), |i, _| {
            let out = net.forward(&xs, i, &mut act);
            match self.family {
                Family::Gaussian => out,
                Family::Bernoulli => logistic(out),
            }
        });
        clamp_expectation(self.family, raw)
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_bernoulli, simulate_gaussian};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gradient_matches_central_differences() {
        let g = simulate_gaussian(40, 1).unwrap();
        let b = simulate_bernoulli(40, 1).unwrap();
        let mut rng = seed::rng(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for data in [&g.data, &b.data] {
            let obj = MlpObjective::new(data, 3, 0.05).unwrap();
            for _ in 0..10 {
                let theta: Vec<f64> = (0..obj.n_params())
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                let grad = obj.gradient(&theta);
                for k in 0..theta.len() {
                    let h = 1e-5;
                    let mut up = theta.clone();
                    let mut dn = theta.clone();
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
                    let scale = fd.abs().max(grad[k].abs()).max(1.0);
                    assert!(
                        (fd - grad[k]).abs() / scale < 1e-5,
                        "param {k}: {fd} vs {}",
                        grad[k]
                    );
                }
            }
        }
    }

    #[test]
    fn huge_decay_gives_constant_prediction() {
        let big = Mlp {
            decay: 1e6,
            ..Mlp::default()
        };
        let g = simulate_gaussian(80, 2).unwrap();
        let fit = big.fit_mlp(&g.data, 3).unwrap();
        let mean = g.data.y().mean();
        assert!(
            fit.fitted().iter().all(|v| (v - mean).abs() < 1e-3),
            "{}",
            fit.fitted()
        );

        let b = simulate_bernoulli(80, 2).unwrap();
        let fit = big.fit_mlp(&b.data, 3).unwrap();
        let prev = b.data.prevalence();
        assert!(fit.fitted().iter().all(|v| (v - prev).abs() < 1e-3));
    }

    #[test]
    fn training_reduces_the_loss_and_is_seeded() {
        let g = simulate_gaussian(100, 4).unwrap();
        let mlp = Mlp {
            max_iter: 300,
            ..Mlp::default()
        };
        let a = mlp.fit_mlp(&g.data, 1).unwrap();
        let b = mlp.fit_mlp(&g.data, 1).unwrap();
        let c = mlp.fit_mlp(&g.data, 2).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
        let tss: f64 = g
            .data
            .y()
            .iter()
            .map(|v| (v - g.data.y().mean()).powi(2))
            .sum();
        assert!(a.objective < tss);
    }

    #[test]
    fn zero_hidden_units_is_rejected() {
        let g = simulate_gaussian(20, 1).unwrap();
        let mlp = Mlp {
            hidden: 0,
            ..Mlp::default()
        };
        assert!(mlp.fit_mlp(&g.data, 0).is_err());
    }
}
