use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::tree::{grow, GrowParams, Presorted, Tree};
use super::{clamp_expectation, Learner, LearnerKind, Predictor};
use crate::data::{logistic, Dataset, Family};
use crate::error::{Error, Result};
use crate::seed;

/// Stochastic gradient boosting with small regression trees (gbm style).
///
/// `depth` is the interaction depth: the number of splits per tree, grown
/// best-first. Gaussian leaves take the mean residual; Bernoulli leaves take
/// a single Newton step on the deviance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostedTrees {
    pub n_iter: usize,
    pub depth: usize,
    pub shrinkage: f64,
    /// Fraction of rows drawn without replacement per iteration; 1 disables subsampling.
    pub subsample: f64,
    pub min_leaf: usize,
}

impl Default for BoostedTrees {
    fn default() -> Self {
        Self {
            n_iter: 3000,
            depth: 3,
            shrinkage: 0.001,
            subsample: 0.5,
            min_leaf: 10,
        }
    }
}

impl BoostedTrees {
    pub fn fit_boost(&self, data: &Dataset, seed: u64) -> Result<BoostFit> {
        if !(self.shrinkage > 0.0 && self.shrinkage < 1.0) {
            return Err(Error::invalid(format!(
                "shrinkage must lie in (0, 1), got {}",
                self.shrinkage
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        if self.depth < 1 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        let family = data.family();
        let x = data.x();
        let y = data.y().as_slice();
        let n = data.n();
        let sorted = Presorted::new(x);
        let params = GrowParams {
            max_depth: None,
            max_splits: Some(self.depth),
            min_split_weight: 0.0,
            min_leaf_weight: self.min_leaf.max(1) as f64,
            mtry: None,
        };
        let bag = ((self.subsample * n as f64).floor() as usize).clamp(1, n);
        let mut rng = seed::rng(seed::derive(seed, &[seed::tag::FIT]));

        let f0 = match family {
            Family::Gaussian => y.iter().sum::<f64>() / n as f64,
            Family::Bernoulli => {
                let p = data.prevalence();
                (p / (1.0 - p)).ln()
            }
        };
        let mut score = vec![f0; n];
        let mut trees = Vec::with_capacity(self.n_iter);
        let mut loss_history = Vec::with_capacity(self.n_iter + 1);
        loss_history.push(deviance(family, y, &score));
        let mut resid = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for _ in 0..self.n_iter {
            for i in 0..n {
                resid[i] = match family {
                    Family::Gaussian => y[i] - score[i],
                    Family::Bernoulli => y[i] - logistic(score[i]),
                };
            }
            if bag == n {
                weights.fill(1.0);
            } else {
                weights.fill(0.0);
                for i in index::sample(&mut rng, n, bag) {
                    weights[i] = 1.0;
                }
            }
            let mut leaf = |rows: &[usize]| match family {
                Family::Gaussian => rows.iter().map(|&r| resid[r]).sum::<f64>() / rows.len() as f64,
                Family::Bernoulli => {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &r in rows {
                        let p = logistic(score[r]);
                        num += resid[r];
                        den += p * (1.0 - p);
                    }
                    num / den.max(1e-12)
                }
            };
            let mut tree = grow(x, &sorted, &resid, &weights, &params, &mut rng, &mut leaf);
            tree.scale_leaves(self.shrinkage);
            for (i, s) in score.iter_mut().enumerate() {
                *s += tree.predict(x, i);
            }
            trees.push(tree);
            loss_history.push(deviance(family, y, &score));
        }
        let fitted = clamp_expectation(family, link_inverse(family, &score));
        Ok(BoostFit {
            family,
            f0,
            trees,
            fitted,
            loss_history,
        })
    }
}

fn link_inverse(family: Family, score: &[f64]) -> DVector<f64> {
    match family {
        Family::Gaussian => DVector::from_column_slice(score),
        Family::Bernoulli => {
            DVector::from_iterator(score.len(), score.iter().map(|&s| logistic(s)))
        }
    }
}

fn deviance(family: Family, y: &[f64], score: &[f64]) -> f64 {
    match family {
        Family::Gaussian => y.iter().zip(score).map(|(a, b)| (a - b) * (a - b)).sum(),
        Family::Bernoulli => {
            // -2 log-likelihood written in terms of the log-odds
            2.0 * y
                .iter()
                .zip(score)
                .map(|(&yi, &s)| s.max(0.0) + (-s.abs()).exp().ln_1p() - yi * s)
                .sum::<f64>()
        }
    }
}

impl Learner for BoostedTrees {
    fn name(&self) -> &'static str {
        "boosted_trees"
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::BoostedTrees
    }

    fn is_stochastic(&self) -> bool {
        self.subsample < 1.0
    }

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.fit_boost(data, seed)?))
    }
}

pub struct BoostFit {
    family: Family,
    f0: f64,
    trees: Vec<Tree>,
    fitted: DVector<f64>,
    loss_history: Vec<f64>,
}

impl BoostFit {
    /// Training deviance before the first tree and after each iteration.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }
}

impl Predictor for BoostFit {
    fn expectation(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let score: Vec<f64> = (0..x.nrows())
            .map(|i| self.f0 + self.trees.iter().map(|t| t.predict(x, i)).sum::<f64>())
            .collect();
        clamp_expectation(self.family, link_inverse(self.family, &score))
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }
}
