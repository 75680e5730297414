use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, GrowParams, Presorted, Tree};
use super::{clamp_expectation, Learner, LearnerKind, Predictor};
use crate::data::{Dataset, Family};
use crate::error::{Error, Result};
use crate::seed;

/// Bagged CART ensemble with random feature subsets (random-forest style).
///
/// Regression trees are grown until nodes hold at most 5 bootstrap rows;
/// classification trees are grown to purity and the ensemble averages the
/// leaf class proportions. Fitted values on the training rows are out-of-bag
/// averages, following the random-forest convention; new rows use every tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaggedTrees {
    pub n_trees: usize,
    /// Candidate features per split; defaults to ceil(d / 3).
    pub mtry: Option<usize>,
    /// Defaults to 5 for Gaussian and 1 for Bernoulli responses.
    pub min_node_size: Option<usize>,
    pub max_depth: Option<usize>,
}

impl Default for BaggedTrees {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node_size: None,
            max_depth: None,
        }
    }
}

impl BaggedTrees {
    pub fn with_trees(n_trees: usize) -> Self {
        Self {
            n_trees,
            ..Self::default()
        }
    }

    pub fn fit_forest(&self, data: &Dataset, seed: u64) -> Result<ForestFit> {
        if self.n_trees < 1 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        let (n, d) = (data.n(), data.d());
        if d == 0 {
            return Err(Error::invalid("bagged trees need at least one covariate"));
        }
        let mtry = self.mtry.unwrap_or(d.div_ceil(3)).clamp(1, d);
        let min_node = self.min_node_size.unwrap_or(match data.family() {
            Family::Gaussian => 5,
            Family::Bernoulli => 1,
        });
        let params = GrowParams {
            max_depth: self.max_depth,
            max_splits: None,
            min_split_weight: min_node as f64,
            min_leaf_weight: 1.0,
            mtry: Some(mtry),
        };
        let x = data.x();
        let y = data.y().as_slice();
        let sorted = Presorted::new(x);

        let grown: Vec<(Tree, Vec<f64>)> = (0..self.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::derive(seed, &[seed::tag::FIT, t as u64]));
                let mut counts = vec![0.0; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1.0;
                }
                let mut mean = |rows: &[usize]| {
                    let (mut w, mut s) = (0.0, 0.0);
                    for &r in rows {
                        w += counts[r];
                        s += counts[r] * y[r];
                    }
                    s / w
                };
                let tree = grow(x, &sorted, y, &counts, &params, &mut rng, &mut mean);
                (tree, counts)
            })
            .collect();

        let mut oob_sum = vec![0.0; n];
        let mut oob_count = vec![0usize; n];
        let mut all_sum = vec![0.0; n];
        for (tree, counts) in &grown {
            for i in 0..n {
                let p = tree.predict(x, i);
                all_sum[i] += p;
                if counts[i] == 0.0 {
                    oob_sum[i] += p;
                    oob_count[i] += 1;
                }
            }
        }
        let trees: Vec<Tree> = grown.into_iter().map(|(t, _)| t).collect();
        let fitted = DVector::from_fn(n, |i, _| {
            if oob_count[i] > 0 {
                oob_sum[i] / oob_count[i] as f64
            } else {
                all_sum[i] / trees.len() as f64
            }
        });
        Ok(ForestFit {
            family: data.family(),
            fitted: clamp_expectation(data.family(), fitted),
            trees,
        })
    }
}

impl Learner for BaggedTrees {
    fn name(&self) -> &'static str {
        "bagged_trees"
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::BaggedTrees
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.fit_forest(data, seed)?))
    }
}

pub struct ForestFit {
    family: Family,
    trees: Vec<Tree>,
    fitted: DVector<f64>,
}

impl Predictor for ForestFit {
    fn expectation(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let m = self.trees.len() as f64;
        let raw = DVector::from_fn(x.nrows(), |i, _| {
            self.trees.iter().map(|t| t.predict(x, i)).sum::<f64>() / m
        });
        clamp_expectation(self.family, raw)
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_bernoulli, simulate_gaussian};

    #[test]
    fn single_stump_predicts_bootstrap_mean() {
        let sim = simulate_gaussian(40, 1).unwrap();
        let learner = BaggedTrees {
            n_trees: 1,
            max_depth: Some(0),
            ..BaggedTrees::default()
        };
        let fit = learner.fit_forest(&sim.data, 7).unwrap();
        // replay the bootstrap draw
        let mut rng = seed::rng(seed::derive(7, &[seed::tag::FIT, 0]));
        let n = sim.data.n();
        let mut s = 0.0;
        for _ in 0..n {
            s += sim.data.y()[rng.random_range(0..n)];
        }
        let boot_mean = s / n as f64;
        let pred = fit.expectation(sim.data.x());
        for p in pred.iter() {
            assert!((p - boot_mean).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_stay_within_response_range() {
        let sim = simulate_gaussian(120, 2).unwrap();
        let fit = BaggedTrees::with_trees(50)
            .fit_forest(&sim.data, 3)
            .unwrap();
        let (lo, hi) = (sim.data.y().min(), sim.data.y().max());
        let grid = DMatrix::from_fn(30, 4, |i, j| {
            (i as f64 * 0.07 + j as f64 * 0.13) % 1.3 - 0.1
        });
        for p in fit.expectation(&grid).iter().chain(fit.fitted().iter()) {
            assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12);
        }
    }

    #[test]
    fn different_seeds_give_different_fits() {
        let sim = simulate_gaussian(100, 4).unwrap();
        let a = BaggedTrees::with_trees(20)
            .fit_forest(&sim.data, 1)
            .unwrap();
        let b = BaggedTrees::with_trees(20)
            .fit_forest(&sim.data, 2)
            .unwrap();
        let c = BaggedTrees::with_trees(20)
            .fit_forest(&sim.data, 1)
            .unwrap();
        assert_ne!(a.expectation(sim.data.x()), b.expectation(sim.data.x()));
        assert_eq!(a.expectation(sim.data.x()), c.expectation(sim.data.x()));
        assert!(BaggedTrees::default().is_stochastic());
    }

    #[test]
    fn classification_votes_are_probabilities() {
        let sim = simulate_bernoulli(150, 5).unwrap();
        let fit = BaggedTrees::with_trees(30)
            .fit_forest(&sim.data, 1)
            .unwrap();
        assert!(fit.fitted().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_trees_is_rejected() {
        let sim = simulate_gaussian(20, 1).unwrap();
        assert!(BaggedTrees::with_trees(0).fit_forest(&sim.data, 0).is_err());
    }
}
