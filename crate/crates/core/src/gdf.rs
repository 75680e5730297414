//! Generalised degrees of freedom by perturbation and refitting.
//!
//! Each round perturbs `k` responses, refits the learner and records the
//! perturbed responses next to the refitted values. Afterwards every datum gets
//! its own least-squares slope of refitted value on perturbed response (the
//! "horizontal" method), and the slopes are summed. Gaussian responses are
//! perturbed with additive noise; Bernoulli responses are flipped.
//!
//! Rounds run in parallel. All randomness comes from seeds derived from the
//! plan seed and the round index, and results are gathered in round order, so
//! estimates do not depend on the number of worker threads.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family, Simulated};
use crate::diagnostics::Diagnostics;
use crate::error::{Error, Result};
use crate::learners::{Learner, LearnerKind};
use crate::seed::{self, tag, Rng};
use crate::stats::{self, Trend};

const MAX_FLIP_RETRIES: u32 = 100;
const MAX_SCHEDULE_ATTEMPTS: u32 = 100;
const MAX_DROP_FRACTION: f64 = 0.1;

/// Adds `N(0, sigma)` noise to the responses at `idx`.
pub fn perturb_gaussian(
    y: &DVector<f64>,
    idx: &[usize],
    sigma: f64,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "perturbation sd must be positive, got {sigma}"
        )));
    }
    check_indices(y.len(), idx)?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = y.clone();
    for &i in idx {
        out[i] += noise.sample(rng);
    }
    Ok(out)
}

/// Replaces `y_i` by `1 - y_i` at `idx`.
pub fn perturb_flip(y: &DVector<f64>, idx: &[usize]) -> Result<DVector<f64>> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("flip perturbation needs a 0/1 response"));
    }
    check_indices(y.len(), idx)?;
    let mut out = y.clone();
    for &i in idx {
        out[i] = 1.0 - out[i];
    }
    Ok(out)
}

fn check_indices(n: usize, idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::invalid("perturbation index set is empty"));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!(
            "perturbation index {bad} out of bounds for {n} rows"
        )));
    }
    Ok(())
}

/// Which rounds enter a datum's slope regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeRounds {
    /// Only rounds that perturbed the datum (plus the unperturbed baseline
    /// pair for deterministic learners).
    Perturbed,
    /// Every round; unperturbed rounds contribute `(y_i, yhat'_i)`.
    All,
}

impl SlopeRounds {
    /// Perturbed rounds for Gaussian data. For flips the perturbed responses of
    /// a datum are all equal, so Bernoulli data regress over every round.
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Gaussian => SlopeRounds::Perturbed,
            Family::Bernoulli => SlopeRounds::All,
        }
    }
}

/// How round index sets are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundDesign {
    /// A uniform k-subset per round, independently; the whole schedule is
    /// redrawn while some datum is perturbed fewer than twice.
    #[default]
    Independent,
    /// Consecutive chunks of a stream of random permutations, so perturbation
    /// counts differ by at most about one across data. When n/k is an integer
    /// the rounds of one permutation partition the data; at k = n/2 two flip
    /// rounds are then exact label complements of each other.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    /// Data points perturbed per round.
    pub k: usize,
    /// Gaussian perturbation sd as a fraction of sd(y); ignored for flips.
    pub sigma_frac: f64,
    pub rounds: usize,
    /// Refits per round for stochastic learners, averaged.
    pub internal_reps: usize,
    pub slope_rounds: SlopeRounds,
    pub design: RoundDesign,
    pub seed: u64,
}

impl PerturbationPlan {
    pub fn new(k: usize, rounds: usize, family: Family, seed: u64) -> Self {
        Self {
            k,
            sigma_frac: 0.25,
            rounds,
            internal_reps: 1,
            slope_rounds: SlopeRounds::default_for(family),
            design: RoundDesign::default(),
            seed,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let n = data.n();
        if self.k < 1 || self.k > n {
            return Err(Error::invalid(format!("k = {} outside [1, {n}]", self.k)));
        }
        if self.internal_reps < 1 {
            return Err(Error::invalid("internal_reps must be at least 1"));
        }
        if data.family() == Family::Gaussian
            && !(self.sigma_frac > 0.0 && self.sigma_frac.is_finite())
        {
            return Err(Error::invalid(format!(
                "sigma_frac must be positive, got {}",
                self.sigma_frac
            )));
        }
        if self.rounds * self.k < 2 * n {
            return Err(Error::InsufficientCoverage {
                index: 0,
                count: self.rounds * self.k / n,
            });
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Points perturbed per round, absolute or as a fraction of n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSpec {
    Count(usize),
    Fraction(f64),
}

impl KSpec {
    pub fn resolve(&self, n: usize) -> Result<usize> {
        let k = match *self {
            KSpec::Count(k) => k,
            KSpec::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::invalid(format!("k fraction {f} outside (0, 1]")));
                }
                ((f * n as f64).round() as usize).max(1)
            }
        };
        if k < 1 || k > n {
            return Err(Error::invalid(format!("k = {k} outside [1, {n}]")));
        }
        Ok(k)
    }
}

/// A plan that is not yet tied to a dataset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanTemplate {
    pub k: KSpec,
    pub sigma_frac: f64,
    /// Rounds are chosen so every datum is perturbed about this often.
    pub perturbations_per_datum: usize,
    pub internal_reps: usize,
    pub slope_rounds: Option<SlopeRounds>,
    pub design: RoundDesign,
}

impl Default for PlanTemplate {
    fn default() -> Self {
        Self {
            k: KSpec::Fraction(1.0),
            sigma_frac: 0.25,
            perturbations_per_datum: 50,
            internal_reps: 1,
            slope_rounds: None,
            design: RoundDesign::default(),
        }
    }
}

impl PlanTemplate {
    /// Recommended k per learner: Gaussian k = n (additive spline: 0.2 n);
    /// Bernoulli k = 0.5 n (boosted trees and networks: 0.04 n).
    pub fn defaults_for(kind: LearnerKind, family: Family) -> Self {
        let fraction = match (family, kind) {
            (Family::Gaussian, LearnerKind::Spline) => 0.2,
            (Family::Gaussian, _) => 1.0,
            (Family::Bernoulli, LearnerKind::BoostedTrees | LearnerKind::Mlp) => 0.04,
            (Family::Bernoulli, _) => 0.5,
        };
        Self {
            k: KSpec::Fraction(fraction),
            ..Self::default()
        }
    }

    pub fn resolve(&self, n: usize, family: Family, seed: u64) -> Result<PerturbationPlan> {
        if self.perturbations_per_datum < 2 {
            return Err(Error::invalid("perturbations_per_datum must be at least 2"));
        }
        let k = self.k.resolve(n)?;
        Ok(PerturbationPlan {
            k,
            sigma_frac: self.sigma_frac,
            rounds: (self.perturbations_per_datum * n).div_ceil(k),
            internal_reps: self.internal_reps,
            slope_rounds: self
                .slope_rounds
                .unwrap_or(SlopeRounds::default_for(family)),
            design: self.design,
            seed,
        })
    }
}

/// Index sets for every round.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub rounds: Vec<Vec<usize>>,
    /// Flip rounds redrawn because they would have removed a class.
    pub redraws: u32,
}

impl Schedule {
    pub fn coverage(&self, n: usize) -> Vec<usize> {
        let mut counts = vec![0; n];
        for round in &self.rounds {
            for &i in round {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// Draws the round index sets according to `plan.design`.
///
/// Flip rounds that would leave a single class are replaced by a fresh
/// uniform draw, at most 100 times per round.
pub fn schedule(plan: &PerturbationPlan, data: &Dataset) -> Result<Schedule> {
    plan.validate(data)?;
    let n = data.n();
    let mut rng = seed::rng(seed::derive(plan.seed, &[tag::SCHEDULE]));
    let mut shortfall = (0, 0);
    for _ in 0..MAX_SCHEDULE_ATTEMPTS {
        let schedule = match plan.design {
            RoundDesign::Independent => draw_independent(plan, data, &mut rng)?,
            RoundDesign::Balanced => draw_balanced(plan, data, &mut rng)?,
        };
        match schedule
            .coverage(n)
            .iter()
            .enumerate()
            .find(|(_, &c)| c < 2)
        {
            None => return Ok(schedule),
            Some((index, &count)) => shortfall = (index, count),
        }
    }
    Err(Error::InsufficientCoverage {
        index: shortfall.0,
        count: shortfall.1,
    })
}

struct ClassGuard {
    active: bool,
    positives: i64,
    n: i64,
    is_positive: Vec<bool>,
}

impl ClassGuard {
    fn new(data: &Dataset) -> Self {
        let is_positive: Vec<bool> = data.y().iter().map(|&v| v == 1.0).collect();
        Self {
            active: data.family() == Family::Bernoulli,
            positives: is_positive.iter().filter(|&&p| p).count() as i64,
            n: data.n() as i64,
            is_positive,
        }
    }

    fn keeps_classes(&self, idx: &[usize]) -> bool {
        if !self.active {
            return true;
        }
        let delta: i64 = idx
            .iter()
            .map(|&i| if self.is_positive[i] { -1 } else { 1 })
            .sum();
        let after = self.positives + delta;
        after > 0 && after < self.n
    }

    /// Returns `round` or a class-preserving uniform replacement.
    fn enforce(
        &self,
        round: Vec<usize>,
        k: usize,
        rng: &mut Rng,
        redraws: &mut u32,
    ) -> Result<Vec<usize>> {
        if self.keeps_classes(&round) {
            return Ok(round);
        }
        for _ in 0..MAX_FLIP_RETRIES {
            *redraws += 1;
            let candidate = index::sample(rng, self.n as usize, k).into_vec();
            if self.keeps_classes(&candidate) {
                return Ok(candidate);
            }
        }
        Err(Error::ClassPreservation(MAX_FLIP_RETRIES))
    }
}

fn draw_independent(plan: &PerturbationPlan, data: &Dataset, rng: &mut Rng) -> Result<Schedule> {
    let guard = ClassGuard::new(data);
    let mut redraws = 0;
    let mut rounds = Vec::with_capacity(plan.rounds);
    for _ in 0..plan.rounds {
        let round = index::sample(rng, data.n(), plan.k).into_vec();
        let mut round = guard.enforce(round, plan.k, rng, &mut redraws)?;
        round.sort_unstable();
        rounds.push(round);
    }
    Ok(Schedule { rounds, redraws })
}

fn draw_balanced(plan: &PerturbationPlan, data: &Dataset, rng: &mut Rng) -> Result<Schedule> {
    let n = data.n();
    let k = plan.k;
    let guard = ClassGuard::new(data);
    let mut deck: VecDeque<usize> = VecDeque::new();
    // an index that would repeat within a round is deferred to the next one
    let mut carry: Vec<usize> = Vec::new();
    let mut rounds = Vec::with_capacity(plan.rounds);
    let mut redraws = 0;
    let mut mark = vec![false; n];
    for _ in 0..plan.rounds {
        mark.fill(false);
        let mut round = Vec::with_capacity(k);
        let mut next_carry = Vec::new();
        for i in carry.drain(..) {
            if round.len() < k && !mark[i] {
                mark[i] = true;
                round.push(i);
            } else {
                next_carry.push(i);
            }
        }
        while round.len() < k {
            if deck.is_empty() {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                deck.extend(perm);
            }
            let i = deck.pop_front().expect("deck refilled");
            if mark[i] {
                next_carry.push(i);
            } else {
                mark[i] = true;
                round.push(i);
            }
        }
        carry = next_carry;
        let mut round = guard.enforce(round, k, rng, &mut redraws)?;
        round.sort_unstable();
        rounds.push(round);
    }
    Ok(Schedule { rounds, redraws })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdfEstimate {
    pub gdf: f64,
    pub slopes: Vec<f64>,
    pub k: usize,
    pub rounds: usize,
    pub dropped_rounds: usize,
    pub flip_redraws: u32,
    /// Refits on perturbed data: rounds x refits per round.
    pub model_evals: u64,
    /// Fits on the unperturbed data.
    pub baseline_evals: u64,
    pub diagnostics: Diagnostics,
}

struct RoundFit {
    y: DVector<f64>,
    yhat: DVector<f64>,
}

fn mean_fitted(
    learner: &dyn Learner,
    data: &Dataset,
    reps: usize,
    seed_of: impl Fn(usize) -> u64,
    diag: &mut Diagnostics,
) -> Result<DVector<f64>> {
    let mut acc = DVector::zeros(data.n());
    for r in 0..reps {
        let fit = learner.fit(data, seed_of(r))?;
        diag.extend(fit.warnings());
        acc += fit.fitted();
    }
    Ok(acc / reps as f64)
}

/// Horizontal-method GDF estimate for one plan.
pub fn estimate_gdf(
    learner: &dyn Learner,
    data: &Dataset,
    plan: &PerturbationPlan,
) -> Result<GdfEstimate> {
    let sched = schedule(plan, data)?;
    let n = data.n();
    let y = data.y();
    let family = data.family();
    let sigma = match family {
        Family::Gaussian => {
            let sd = stats::sd(y.as_slice());
            if sd.is_nan() || sd <= 0.0 {
                return Err(Error::invalid(
                    "response has no spread to scale the perturbation",
                ));
            }
            plan.sigma_frac * sd
        }
        Family::Bernoulli => 0.0,
    };
    let stochastic = learner.is_stochastic();
    let reps = if stochastic { plan.internal_reps } else { 1 };

    let mut diagnostics = Diagnostics::new();
    let baseline = mean_fitted(
        learner,
        data,
        reps,
        |r| seed::derive(plan.seed, &[tag::BASELINE, r as u64]),
        &mut diagnostics,
    )?;

    let outcomes: Vec<(Result<RoundFit>, Diagnostics)> = sched
        .rounds
        .par_iter()
        .enumerate()
        .map(|(t, idx)| {
            let mut diag = Diagnostics::new();
            let round_seed = seed::derive(plan.seed, &[tag::ROUND, t as u64]);
            let result = (|| {
                let y_new = match family {
                    Family::Gaussian => {
                        perturb_gaussian(y, idx, sigma, &mut seed::rng(round_seed))?
                    }
                    Family::Bernoulli => perturb_flip(y, idx)?,
                };
                let perturbed = data.with_response(y_new.clone())?;
                let yhat = mean_fitted(
                    learner,
                    &perturbed,
                    reps,
                    |r| seed::derive(round_seed, &[tag::FIT, r as u64]),
                    &mut diag,
                )?;
                Ok(RoundFit { y: y_new, yhat })
            })();
            (result, diag)
        })
        .collect();

    let mut fits: Vec<Option<RoundFit>> = Vec::with_capacity(outcomes.len());
    let mut dropped = 0;
    for (result, diag) in outcomes {
        diagnostics.merge(&diag);
        match result {
            Ok(f) => fits.push(Some(f)),
            Err(e) => {
                diagnostics.warn(format!("round dropped: {e}"));
                dropped += 1;
                fits.push(None);
            }
        }
    }
    if dropped as f64 > MAX_DROP_FRACTION * plan.rounds as f64 {
        return Err(Error::UnstableEstimation {
            dropped,
            rounds: plan.rounds,
        });
    }

    let mut member = vec![vec![false; n]; plan.rounds];
    for (t, idx) in sched.rounds.iter().enumerate() {
        for &i in idx {
            member[t][i] = true;
        }
    }
    let mut slopes = Vec::with_capacity(n);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        xs.clear();
        ys.clear();
        let mut perturbed_count = 0;
        for (t, fit) in fits.iter().enumerate() {
            let Some(fit) = fit else { continue };
            if member[t][i] {
                perturbed_count += 1;
            } else if plan.slope_rounds == SlopeRounds::Perturbed {
                continue;
            }
            xs.push(fit.y[i]);
            ys.push(fit.yhat[i]);
        }
        if perturbed_count < 2 {
            return Err(Error::InsufficientCoverage {
                index: i,
                count: perturbed_count,
            });
        }
        if !stochastic {
            xs.push(y[i]);
            ys.push(baseline[i]);
        }
        let slope = match stats::ls_slope(&xs, &ys) {
            Some(s) => s,
            None => {
                // every recorded response is identical: contrast with the baseline
                let dy = stats::mean(&xs) - y[i];
                if dy == 0.0 {
                    return Err(Error::InsufficientCoverage { index: i, count: 0 });
                }
                (stats::mean(&ys) - baseline[i]) / dy
            }
        };
        slopes.push(slope);
    }
    Ok(GdfEstimate {
        gdf: slopes.iter().sum(),
        slopes,
        k: plan.k,
        rounds: plan.rounds,
        dropped_rounds: dropped,
        flip_redraws: sched.redraws,
        model_evals: (plan.rounds * reps) as u64,
        baseline_evals: reps as u64,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdfSummary {
    pub estimates: Vec<GdfEstimate>,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of the mean over replicates.
    pub se: f64,
    pub model_evals: u64,
    pub baseline_evals: u64,
    pub diagnostics: Diagnostics,
}

impl GdfSummary {
    fn from_estimates(estimates: Vec<GdfEstimate>) -> Self {
        let values: Vec<f64> = estimates.iter().map(|e| e.gdf).collect();
        let mut diagnostics = Diagnostics::new();
        for e in &estimates {
            diagnostics.merge(&e.diagnostics);
        }
        Self {
            mean: stats::mean(&values),
            sd: if values.len() > 1 {
                stats::sd(&values)
            } else {
                0.0
            },
            se: if values.len() > 1 {
                stats::se(&values)
            } else {
                0.0
            },
            model_evals: estimates.iter().map(|e| e.model_evals).sum(),
            baseline_evals: estimates.iter().map(|e| e.baseline_evals).sum(),
            diagnostics,
            estimates,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.gdf).collect()
    }
}

fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed::derive(seed, &[tag::REPLICATE, r as u64])
}

/// Independent replicates of [`estimate_gdf`], replicate `r` seeded from
/// `(plan.seed, r)`.
pub fn replicate_gdf(
    learner: &dyn Learner,
    data: &Dataset,
    plan: &PerturbationPlan,
    replicates: usize,
) -> Result<GdfSummary> {
    if replicates < 1 {
        return Err(Error::invalid("at least one replicate is required"));
    }
    let estimates = (0..replicates)
        .map(|r| estimate_gdf(learner, data, &plan.with_seed(replicate_seed(plan.seed, r))))
        .collect::<Result<Vec<_>>>()?;
    Ok(GdfSummary::from_estimates(estimates))
}

/// One cell of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The swept value (k or sigma_frac).
    pub parameter: f64,
    pub replicate: usize,
    pub gdf: f64,
    pub model_evals: u64,
    pub baseline_evals: u64,
    pub dropped_rounds: usize,
    #[serde(default, skip_serializing_if = "Diagnostics::is_empty")]
    pub diagnostics: Diagnostics,
}

fn sweep(
    learner: &dyn Learner,
    data: &Dataset,
    cells: &[(f64, PlanTemplate)],
    reps: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if reps < 1 {
        return Err(Error::invalid(
            "at least one replicate per cell is required",
        ));
    }
    let mut rows = Vec::with_capacity(cells.len() * reps);
    for (c, (parameter, template)) in cells.iter().enumerate() {
        for r in 0..reps {
            let cell_seed = seed::derive(seed, &[tag::SWEEP, c as u64, r as u64]);
            let plan = template.resolve(data.n(), data.family(), cell_seed)?;
            let est = estimate_gdf(learner, data, &plan)?;
            rows.push(SweepRow {
                parameter: *parameter,
                replicate: r,
                gdf: est.gdf,
                model_evals: est.model_evals,
                baseline_evals: est.baseline_evals,
                dropped_rounds: est.dropped_rounds,
                diagnostics: est.diagnostics,
            });
        }
    }
    Ok(rows)
}

/// GDF over a grid of k values with `reps` independent replicates per value.
pub fn sweep_k(
    learner: &dyn Learner,
    data: &Dataset,
    k_values: &[usize],
    reps: usize,
    template: &PlanTemplate,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let cells: Vec<(f64, PlanTemplate)> = k_values
        .iter()
        .map(|&k| {
            (
                k as f64,
                PlanTemplate {
                    k: KSpec::Count(k),
                    ..template.clone()
                },
            )
        })
        .collect();
    sweep(learner, data, &cells, reps, seed)
}

/// GDF over a grid of Gaussian perturbation strengths.
pub fn sweep_sigma(
    learner: &dyn Learner,
    data: &Dataset,
    sigma_fracs: &[f64],
    reps: usize,
    template: &PlanTemplate,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if data.family() != Family::Gaussian {
        return Err(Error::invalid(
            "perturbation strength applies to Gaussian data only",
        ));
    }
    let cells: Vec<(f64, PlanTemplate)> = sigma_fracs
        .iter()
        .map(|&s| {
            (
                s,
                PlanTemplate {
                    sigma_frac: s,
                    ..template.clone()
                },
            )
        })
        .collect();
    sweep(learner, data, &cells, reps, seed)
}

/// Least-squares trend of GDF on the swept parameter across all rows.
pub fn sweep_trend(rows: &[SweepRow]) -> Option<Trend> {
    let xs: Vec<f64> = rows.iter().map(|r| r.parameter).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.gdf).collect();
    stats::linear_trend(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    /// 1-based replicate count.
    pub replicate: usize,
    pub gdf: f64,
    pub running_mean: f64,
    pub running_se: f64,
    pub cumulative_evals: u64,
}

/// Running mean and standard error of GDF as replicates accumulate.
pub fn convergence_study(
    learner: &dyn Learner,
    data: &Dataset,
    plan: &PerturbationPlan,
    max_replicates: usize,
) -> Result<Vec<ConvergencePoint>> {
    Ok(convergence_points(&replicate_gdf(
        learner,
        data,
        plan,
        max_replicates,
    )?))
}

/// Running statistics over the replicates of `summary`, in order.
pub fn convergence_points(summary: &GdfSummary) -> Vec<ConvergencePoint> {
    let mut evals = 0;
    stats::running_mean_se(&summary.values())
        .into_iter()
        .zip(&summary.estimates)
        .enumerate()
        .map(|(r, ((running_mean, running_se), est))| {
            evals += est.model_evals;
            ConvergencePoint {
                replicate: r + 1,
                gdf: est.gdf,
                running_mean,
                running_se,
                cumulative_evals: evals,
            }
        })
        .collect()
}

/// Additive Gaussian noise around known conditional means at fixed covariates.
#[derive(Debug, Clone)]
pub struct GaussianGenerator {
    pub x: Arc<DMatrix<f64>>,
    pub mean: DVector<f64>,
    pub sigma: f64,
}

impl GaussianGenerator {
    pub fn new(x: Arc<DMatrix<f64>>, mean: DVector<f64>, sigma: f64) -> Result<Self> {
        if x.nrows() != mean.len() {
            return Err(Error::invalid(
                "generator mean length does not match covariate rows",
            ));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "generator sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { x, mean, sigma })
    }

    /// The generator behind a Gaussian simulation (unit noise).
    pub fn from_simulation(sim: &Simulated) -> Result<Self> {
        if sim.data.family() != Family::Gaussian {
            return Err(Error::invalid(
                "covariance oracle needs a Gaussian generator",
            ));
        }
        Self::new(sim.data.shared_x(), sim.mean.clone(), 1.0)
    }

    pub fn draw(&self, rng: &mut Rng) -> Result<Dataset> {
        let noise = Normal::new(0.0, self.sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let y = self.mean.map(|m| m + noise.sample(rng));
        Dataset::from_shared(self.x.clone(), y, Family::Gaussian)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub gdf: f64,
    pub se: f64,
    pub n_sims_used: usize,
    pub dropped: usize,
}

/// Covariance form of GDF: the sum over data of cov(yhat_i, y_i) / sigma^2,
/// estimated from `n_sims` fresh response vectors.
pub fn gdf_cov_oracle(
    learner: &dyn Learner,
    generator: &GaussianGenerator,
    n_sims: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if n_sims < 100 {
        return Err(Error::invalid(format!(
            "n_sims must be at least 100, got {n_sims}"
        )));
    }
    let sims: Vec<Option<(DVector<f64>, DVector<f64>)>> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng(seed::derive(seed, &[tag::ORACLE, s as u64]));
            let data = generator.draw(&mut rng).ok()?;
            let fit = learner
                .fit(
                    &data,
                    seed::derive(seed, &[tag::ORACLE, s as u64, tag::FIT]),
                )
                .ok()?;
            Some((data.y().clone(), fit.fitted().clone()))
        })
        .collect();
    let used: Vec<&(DVector<f64>, DVector<f64>)> = sims.iter().flatten().collect();
    let dropped = n_sims - used.len();
    if dropped as f64 > MAX_DROP_FRACTION * n_sims as f64 {
        return Err(Error::UnstableEstimation {
            dropped,
            rounds: n_sims,
        });
    }
    let m = used.len();
    let n = generator.mean.len();
    let mut y_bar = DVector::zeros(n);
    let mut f_bar = DVector::zeros(n);
    for (y, f) in &used {
        y_bar += y;
        f_bar += f;
    }
    y_bar /= m as f64;
    f_bar /= m as f64;
    let var = generator.sigma * generator.sigma;
    let contributions: Vec<f64> = used
        .iter()
        .map(|(y, f)| (f - &f_bar).dot(&(y - &y_bar)) / var)
        .collect();
    let gdf = contributions.iter().sum::<f64>() / (m - 1) as f64;
    let se = stats::sd(&contributions) * (m as f64).sqrt() / (m - 1) as f64;
    Ok(OracleEstimate {
        gdf,
        se,
        n_sims_used: m,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_bernoulli, simulate_gaussian};
    use crate::learners::{hat_matrix, Glm, GlmDesign, Predictor};
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_perturbation_has_the_requested_sd() {
        let y = DVector::from_element(1, 3.0);
        let mut rng = seed::rng(1);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| perturb_gaussian(&y, &[0], 0.7, &mut rng).unwrap()[0] - 3.0)
            .collect();
        assert!((stats::sd(&draws) / 0.7 - 1.0).abs() < 0.03);
    }

    #[test]
    fn gaussian_perturbation_leaves_other_rows_untouched() {
        let y = DVector::from_vec(vec![1.5, -2.25, 7.0, 0.1]);
        let out = perturb_gaussian(&y, &[1, 3], 0.5, &mut seed::rng(2)).unwrap();
        assert_eq!(out[0].to_bits(), y[0].to_bits());
        assert_eq!(out[2].to_bits(), y[2].to_bits());
        assert_ne!(out[1], y[1]);
        assert!(perturb_gaussian(&y, &[], 0.5, &mut seed::rng(2)).is_err());
        assert!(perturb_gaussian(&y, &[4], 0.5, &mut seed::rng(2)).is_err());
        assert!(perturb_gaussian(&y, &[0], 0.0, &mut seed::rng(2)).is_err());
    }

    #[test]
    fn flip_examples() {
        let y = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        assert_eq!(perturb_flip(&y, &[0]).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
        let twice = perturb_flip(&perturb_flip(&y, &[1, 2]).unwrap(), &[1, 2]).unwrap();
        assert_eq!(twice, y);
        assert_eq!(
            perturb_flip(&y, &[0, 1, 2]).unwrap().as_slice(),
            &[1.0, 0.0, 0.0]
        );
        assert!(perturb_flip(&DVector::from_vec(vec![0.5, 1.0]), &[0]).is_err());
    }

    #[test]
    fn schedule_is_balanced() {
        let sim = simulate_gaussian(50, 1).unwrap();
        for k in [1, 7, 25, 50] {
            let plan = PerturbationPlan {
                design: RoundDesign::Balanced,
                ..PerturbationPlan::new(k, (4 * 50usize).div_ceil(k), Family::Gaussian, 3)
            };
            let sched = schedule(&plan, &sim.data).unwrap();
            for round in &sched.rounds {
                assert_eq!(round.len(), k);
                assert!(round.windows(2).all(|w| w[0] < w[1]));
            }
            let cov = sched.coverage(50);
            let (lo, hi) = (cov.iter().min().unwrap(), cov.iter().max().unwrap());
            assert!(*lo >= 4 - 1 && hi - lo <= 2, "k={k}: {lo}..{hi}");
        }
    }

    #[test]
    fn too_few_rounds_is_rejected() {
        let sim = simulate_gaussian(40, 1).unwrap();
        let plan = PerturbationPlan::new(10, 7, Family::Gaussian, 0);
        assert!(matches!(
            estimate_gdf(&Glm::default(), &sim.data, &plan),
            Err(Error::InsufficientCoverage { .. })
        ));
    }

    #[test]
    fn impossible_flip_rounds_fail_after_retries() {
        let data = Dataset::new(
            DMatrix::from_vec(2, 1, vec![0.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            Family::Bernoulli,
        )
        .unwrap();
        let plan = PerturbationPlan::new(1, 4, Family::Bernoulli, 0);
        assert_eq!(
            schedule(&plan, &data),
            Err(Error::ClassPreservation(MAX_FLIP_RETRIES))
        );
    }

    #[test]
    fn ols_with_single_point_rounds_is_exact() {
        let sim = simulate_gaussian(60, 4).unwrap();
        let plan = PerturbationPlan::new(1, 720, Family::Gaussian, 9);
        let est = estimate_gdf(&Glm::default(), &sim.data, &plan).unwrap();
        assert_relative_eq!(est.gdf, 15.0, epsilon = 1e-6);
        assert_relative_eq!(est.gdf, est.slopes.iter().sum::<f64>(), epsilon = 1e-10);
        assert_eq!(est.model_evals, 720);
        assert_eq!(est.baseline_evals, 1);
    }

    #[test]
    fn slopes_match_leverages_of_the_hat_matrix() {
        let sim = simulate_gaussian(40, 5).unwrap();
        let glm = Glm {
            design: GlmDesign::Linear,
        };
        let plan = PerturbationPlan::new(13, 40, Family::Gaussian, 2);
        let est = estimate_gdf(&glm, &sim.data, &plan).unwrap();
        let h = glm.fit_glm(&sim.data).unwrap().linear_smoother().unwrap();
        for (i, s) in est.slopes.iter().enumerate() {
            // other perturbed rows leak into y-hat_i, so slopes are noisy around h_ii
            assert!((s - h.influence[(i, i)]).abs() < 0.5);
        }
        let exact = hat_matrix(
            &crate::learners::design_expand(sim.data.x()).unwrap().z,
            None,
        )
        .unwrap();
        assert_relative_eq!(exact.trace, 15.0, epsilon = 1e-9);
    }

    #[test]
    fn intercept_only_gdf_is_one() {
        let sim = simulate_gaussian(50, 6).unwrap();
        let plan = PerturbationPlan::new(1, 600, Family::Gaussian, 1);
        let est = estimate_gdf(&Glm::intercept_only(), &sim.data, &plan).unwrap();
        assert_relative_eq!(est.gdf, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let sim = simulate_bernoulli(80, 2).unwrap();
        let plan = PerturbationPlan::new(40, 20, Family::Bernoulli, 5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_gdf(&Glm::default(), &sim.data, &plan).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }

    /// Fails on roughly one perturbed response vector in `every`.
    struct Flaky {
        every: u64,
        original: f64,
    }

    impl Learner for Flaky {
        fn name(&self) -> &'static str {
            "flaky"
        }
        fn kind(&self) -> LearnerKind {
            LearnerKind::Glm
        }
        fn is_stochastic(&self) -> bool {
            true
        }
        fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Predictor>> {
            let first = data.y()[0];
            if first != self.original && first.to_bits().is_multiple_of(self.every) {
                return Err(Error::Fit("injected failure".into()));
            }
            Glm::intercept_only().fit(data, seed)
        }
    }

    #[test]
    fn failed_rounds_are_dropped_or_fatal() {
        let sim = simulate_gaussian(30, 1).unwrap();
        let original = sim.data.y()[0];
        let plan = PerturbationPlan::new(30, 200, Family::Gaussian, 8);
        let ok = estimate_gdf(
            &Flaky {
                every: 40,
                original,
            },
            &sim.data,
            &plan,
        )
        .unwrap();
        assert!(ok.dropped_rounds > 0);
        assert_eq!(
            ok.diagnostics
                .count("round dropped: fit failed: injected failure"),
            ok.dropped_rounds as u64
        );
        assert!(matches!(
            estimate_gdf(&Flaky { every: 3, original }, &sim.data, &plan),
            Err(Error::UnstableEstimation { .. })
        ));
    }

    #[test]
    fn template_resolution() {
        let t = PlanTemplate::defaults_for(LearnerKind::BoostedTrees, Family::Bernoulli);
        let plan = t.resolve(300, Family::Bernoulli, 0).unwrap();
        assert_eq!(plan.k, 12);
        assert_eq!(plan.rounds, 1250);
        assert_eq!(plan.slope_rounds, SlopeRounds::All);
        let t = PlanTemplate::defaults_for(LearnerKind::Spline, Family::Gaussian);
        assert_eq!(t.resolve(250, Family::Gaussian, 0).unwrap().k, 50);
        assert!(KSpec::Fraction(0.0).resolve(10).is_err());
        assert!(KSpec::Count(11).resolve(10).is_err());
    }

    #[test]
    fn convergence_trace_matches_prefix_means() {
        let sim = simulate_gaussian(40, 3).unwrap();
        let plan = PerturbationPlan::new(40, 4, Family::Gaussian, 1);
        let trace = convergence_study(&Glm::default(), &sim.data, &plan, 6).unwrap();
        for (r, p) in trace.iter().enumerate() {
            let m = trace[..=r].iter().map(|q| q.gdf).sum::<f64>() / (r + 1) as f64;
            assert_relative_eq!(p.running_mean, m, epsilon = 1e-12);
            assert_eq!(p.cumulative_evals, 4 * (r as u64 + 1));
        }
    }

    #[test]
    fn single_cell_sweep_has_one_row() {
        let sim = simulate_gaussian(30, 3).unwrap();
        let rows = sweep_k(
            &Glm::default(),
            &sim.data,
            &[30],
            1,
            &PlanTemplate::default(),
            0,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].parameter, 30.0);
    }

    #[test]
    fn covariance_oracle_recovers_known_traces() {
        let sim = simulate_gaussian(60, 7).unwrap();
        let gen = GaussianGenerator::from_simulation(&sim).unwrap();
        let ols = gdf_cov_oracle(&Glm::default(), &gen, 1000, 1).unwrap();
        assert!((ols.gdf / 15.0 - 1.0).abs() < 0.05, "{ols:?}");
        let one = gdf_cov_oracle(&Glm::intercept_only(), &gen, 500, 2).unwrap();
        assert!((one.gdf - 1.0).abs() < 0.1, "{one:?}");
        assert!(gdf_cov_oracle(&Glm::default(), &gen, 99, 0).is_err());
    }
}
