//! The fit/predict contract and the reference learners.
//!
//! Every learner maps a [`Dataset`] and a seed to a fitted [`Predictor`].
//! Deterministic learners ignore the seed; stochastic ones derive all of
//! their randomness from it, so identical `(data, seed)` pairs always yield
//! identical expectations.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family, PROB_EPS};
use crate::error::Result;

mod boost;
mod design;
mod forest;
mod glm;
mod hat;
pub(crate) mod linalg;
mod mlp;
mod spline;
mod tree;

pub use boost::BoostedTrees;
pub use design::{design_expand, expanded_width, DesignMatrix};
pub use forest::BaggedTrees;
pub use glm::{Glm, GlmDesign};
pub use hat::{hat_matrix, LinearSmoother, Penalty};
pub use mlp::{Mlp, MlpObjective};
pub use spline::{Smoothing, SplineAdditive};

/// A fitted model.
pub trait Predictor: Send + Sync {
    /// Expected response for each row of `x` (Gaussian: conditional mean;
    /// Bernoulli: probability clamped into `[1e-12, 1 - 1e-12]`).
    fn expectation(&self, x: &DMatrix<f64>) -> DVector<f64>;

    /// Expected response at the training rows, as the learner reports its own
    /// fitted values.
    fn fitted(&self) -> &DVector<f64>;

    /// Degrees of freedom reported by the learner itself, if it has any.
    fn self_dof(&self) -> Option<f64> {
        None
    }

    /// Exact influence matrix for learners that are linear smoothers.
    fn linear_smoother(&self) -> Option<LinearSmoother> {
        None
    }

    /// Non-fatal issues raised while fitting (convergence, boundary choices).
    fn warnings(&self) -> &[String] {
        &[]
    }
}

pub trait Learner: Send + Sync {
    fn name(&self) -> &'static str;

    fn kind(&self) -> LearnerKind;

    /// Whether two fits on identical data with different seeds may differ.
    fn is_stochastic(&self) -> bool;

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Predictor>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Glm,
    Spline,
    BaggedTrees,
    BoostedTrees,
    Mlp,
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::Glm => "glm",
            LearnerKind::Spline => "spline",
            LearnerKind::BaggedTrees => "bagged_trees",
            LearnerKind::BoostedTrees => "boosted_trees",
            LearnerKind::Mlp => "mlp",
        })
    }
}

/// Serializable learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Glm(Glm),
    Spline(SplineAdditive),
    BaggedTrees(BaggedTrees),
    BoostedTrees(BoostedTrees),
    Mlp(Mlp),
}

impl LearnerSpec {
    /// The five reference learners with default hyperparameters.
    pub fn defaults() -> Vec<LearnerSpec> {
        vec![
            LearnerSpec::Glm(Glm::default()),
            LearnerSpec::Spline(SplineAdditive::default()),
            LearnerSpec::BaggedTrees(BaggedTrees::default()),
            LearnerSpec::Mlp(Mlp::default()),
            LearnerSpec::BoostedTrees(BoostedTrees::default()),
        ]
    }

    pub fn as_learner(&self) -> &dyn Learner {
        match self {
            LearnerSpec::Glm(l) => l,
            LearnerSpec::Spline(l) => l,
            LearnerSpec::BaggedTrees(l) => l,
            LearnerSpec::BoostedTrees(l) => l,
            LearnerSpec::Mlp(l) => l,
        }
    }

    pub fn kind(&self) -> LearnerKind {
        self.as_learner().kind()
    }
}

pub(crate) fn clamp_expectation(family: Family, mut v: DVector<f64>) -> DVector<f64> {
    if family == Family::Bernoulli {
        v.apply(|m| *m = m.clamp(PROB_EPS, 1.0 - PROB_EPS));
    }
    v
}
