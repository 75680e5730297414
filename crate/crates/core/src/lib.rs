//! Effective model complexity for black-box learners.
//!
//! This crate estimates Generalised Degrees of Freedom (GDF) by perturbing the
//! response and refitting, estimates the same quantity from repeated
//! cross-validation, and turns either into AICc values and model weights.
//!
//! The main entry points are:
//!
//! - [`data`]: datasets, distribution families, log-likelihoods and the two
//!   reference simulators.
//! - [`learners`]: the [`Learner`]/[`Predictor`] contract, five reference
//!   learners and exact hat-matrix oracles for linear smoothers.
//! - [`gdf`]: the perturbation engine (horizontal GDF estimator, k-sweeps,
//!   convergence studies, covariance oracle).
//! - [`crossval`]: fold planning and cross-validated log-likelihood.
//! - [`criteria`]: AICc, Akaike weights, CV weights and model comparison.
//!
//! All randomness is derived from explicit `u64` seeds through [`seed`], so
//! every estimator is reproducible irrespective of thread scheduling.

pub mod criteria;
pub mod crossval;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gdf;
pub mod learners;
pub mod seed;
pub mod stats;

pub use criteria::{
    aicc, aicc_with, akaike_weights, compare_models, cv_weights, AiccCorrection, ComparisonRow,
    CriteriaOptions, CvWeightSign, ModelComparison,
};
pub use crossval::{cv_loglik, make_folds, repeated_cv, CvEstimate, FoldPlan};
pub use data::{log_likelihood, simulate_bernoulli, simulate_gaussian, Dataset, Family, Simulated};
pub use diagnostics::Diagnostics;
pub use error::{Error, Result};
pub use gdf::{
    convergence_study, estimate_gdf, gdf_cov_oracle, replicate_gdf, sweep_k, sweep_sigma,
    GaussianGenerator, GdfEstimate, GdfSummary, KSpec, PerturbationPlan, PlanTemplate, RoundDesign,
    SlopeRounds,
};
pub use learners::{
    design_expand, hat_matrix, DesignMatrix, Learner, LearnerKind, LearnerSpec, LinearSmoother,
    Predictor,
};
