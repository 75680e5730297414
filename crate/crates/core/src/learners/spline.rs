//! Additive model of penalized cubic regression splines.
//!
//! Each covariate gets a cubic B-spline basis on equally spaced knots with a
//! second-order difference penalty, reparameterised to satisfy a sum-to-zero
//! constraint so the components are identifiable next to the intercept.
//! One smoothing parameter per covariate is chosen by minimising GCV on a
//! log-spaced grid with cyclic coordinate search. Bernoulli responses use
//! penalized IRLS and select the parameters on each working problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::hat::{hat_matrix, LinearSmoother, Penalty};
use super::{clamp_expectation, Learner, LearnerKind, Predictor};
use crate::data::{logistic, Dataset, Family};
use crate::error::{Error, Result};

const DEGREE: usize = 3;
const LOG10_LAMBDA_MIN: f64 = -6.0;
const LOG10_LAMBDA_MAX: f64 = 8.0;
const LOG10_LAMBDA_STEP: f64 = 0.5;
const MAX_SWEEPS: usize = 6;
const REFINE_SWEEPS: usize = 40;
const GOLDEN_TOL: f64 = 1e-5;
const REFINE_TOL: f64 = 1e-5;
/// PIRLS iterations that may still re-select smoothing parameters.
const PIRLS_SELECT_ITER: usize = 10;
const PIRLS_MAX_ITER: usize = 40;
const PIRLS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", content = "lambda", rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    Gcv,
    /// Restricted likelihood (Laplace approximation for Bernoulli).
    Reml,
    /// One smoothing parameter per covariate (relative to the scaled penalty).
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplineAdditive {
    /// B-spline coefficients per covariate before the centring constraint.
    pub basis_size: usize,
    pub smoothing: Smoothing,
}

impl Default for SplineAdditive {
    fn default() -> Self {
        Self {
            basis_size: 10,
            smoothing: Smoothing::Gcv,
        }
    }
}

/// Basis for one covariate: knots, range and the constraint null space.
#[derive(Debug, Clone)]
struct CovariateBasis {
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
    /// q x (q - 1), maps constrained to raw B-spline coefficients.
    null_space: DMatrix<f64>,
}

impl CovariateBasis {
    fn new(column: &[f64], q: usize) -> Result<Self> {
        let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi.is_nan() || lo.is_nan() || hi <= lo {
            return Err(Error::invalid("spline covariate has no spread"));
        }
        let h = (hi - lo) / (q - DEGREE) as f64;
        let knots = (0..q + DEGREE + 1)
            .map(|j| lo + (j as f64 - DEGREE as f64) * h)
            .collect();
        let mut basis = Self {
            lo,
            hi,
            knots,
            null_space: DMatrix::zeros(0, 0),
        };
        let raw = basis.raw_matrix(column, q);
        let c: DVector<f64> = DVector::from_fn(q, |j, _| raw.column(j).sum());
        basis.null_space = householder_null_space(&c);
        Ok(basis)
    }

    fn raw_matrix(&self, column: &[f64], q: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(column.len(), q);
        let mut vals = [0.0; DEGREE + 1];
        for (i, &x) in column.iter().enumerate() {
            let first = self.eval(x, q, &mut vals);
            for r in 0..=DEGREE {
                b[(i, first + r)] = vals[r];
            }
        }
        b
    }

    /// Non-zero cubic B-splines at `x` (clamped to the fitted range); returns
    /// the index of the first one.
    fn eval(&self, x: f64, q: usize, out: &mut [f64; DEGREE + 1]) -> usize {
        let x = x.clamp(self.lo, self.hi);
        let t = &self.knots;
        let mut m = DEGREE;
        while m < q - 1 && x >= t[m + 1] {
            m += 1;
        }
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        out.fill(0.0);
        out[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[m + 1 - j];
            right[j] = t[m + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        m - DEGREE
    }

    fn constrained(&self, column: &[f64], q: usize) -> DMatrix<f64> {
        self.raw_matrix(column, q) * &self.null_space
    }
}

fn bernoulli_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    -2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&yi, &m)| {
            let m = m.clamp(1e-15, 1.0 - 1e-15);
            yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
        })
        .sum::<f64>()
}

/// Orthonormal basis of the complement of `c`, via one Householder reflection.
fn householder_null_space(c: &DVector<f64>) -> DMatrix<f64> {
    let q = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::identity(q, q) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, q - 1).into_owned()
}

fn difference_penalty(q: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(q - 2, q);
    for i in 0..q - 2 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d.tr_mul(&d)
}

fn lambda_grid() -> Vec<f64> {
    let steps = ((LOG10_LAMBDA_MAX - LOG10_LAMBDA_MIN) / LOG10_LAMBDA_STEP).round() as usize;
    (0..=steps)
        .map(|i| 10f64.powf(LOG10_LAMBDA_MIN + i as f64 * LOG10_LAMBDA_STEP))
        .collect()
}

/// Design, per-covariate penalties and column blocks of a fitted basis.
struct AdditiveDesign {
    z: DMatrix<f64>,
    penalties: Vec<DMatrix<f64>>,
    /// Rank of each block penalty.
    ranks: Vec<usize>,
    blocks: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Criterion {
    Gcv,
    /// Mallows' Cp / UBRE for working models with unit dispersion.
    Ubre,
    /// `scale_known` for working models with unit dispersion.
    Reml {
        scale_known: bool,
    },
}

impl AdditiveDesign {
    fn total_penalty(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let p = self.z.ncols();
        let mut s = DMatrix::zeros(p, p);
        for ((start, len), (pen, &lam)) in
            self.blocks.iter().zip(self.penalties.iter().zip(lambdas))
        {
            let mut view = s.view_mut((*start, *start), (*len, *len));
            view += pen * lam;
        }
        s
    }
}

/// Result of one penalized weighted least-squares solve.
struct PwlsSolution {
    coef: DVector<f64>,
    /// (Z'WZ + S)^-1 Z'WZ
    influence_coef: DMatrix<f64>,
    score: f64,
}

/// One (working) penalized weighted least-squares problem.
struct Pwls<'a> {
    design: &'a AdditiveDesign,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    w: &'a DVector<f64>,
    z_work: &'a DVector<f64>,
    criterion: Criterion,
}

impl<'a> Pwls<'a> {
    fn new(
        design: &'a AdditiveDesign,
        w: &'a DVector<f64>,
        z_work: &'a DVector<f64>,
        criterion: Criterion,
    ) -> Self {
        let mut wz = design.z.clone();
        for (i, mut row) in wz.row_iter_mut().enumerate() {
            row *= w[i];
        }
        Self {
            gram: design.z.tr_mul(&wz),
            rhs: wz.tr_mul(z_work),
            design,
            w,
            z_work,
            criterion,
        }
    }

    fn solve(&self, lambdas: &[f64]) -> Option<PwlsSolution> {
        let design = self.design;
        let s = design.total_penalty(lambdas);
        let chol = (&self.gram + &s).cholesky()?;
        let coef = chol.solve(&self.rhs);
        let influence_coef = chol.solve(&self.gram);
        let trace = influence_coef.trace();
        let n = self.w.len() as f64;
        let fit = &design.z * &coef;
        let rss: f64 = (0..self.w.len())
            .map(|i| {
                let r = self.z_work[i] - fit[i];
                self.w[i] * r * r
            })
            .sum();
        let score = match self.criterion {
            Criterion::Gcv => {
                let denom = n - trace;
                if denom > 0.0 {
                    n * rss / (denom * denom)
                } else {
                    f64::INFINITY
                }
            }
            Criterion::Ubre => rss / n - 1.0 + 2.0 * trace / n,
            Criterion::Reml { scale_known } => {
                let log_det = 2.0
                    * chol
                        .l_dirty()
                        .diagonal()
                        .iter()
                        .map(|v| v.ln())
                        .sum::<f64>();
                let log_det_s: f64 = design
                    .ranks
                    .iter()
                    .zip(lambdas)
                    .map(|(&r, &l)| r as f64 * l.ln())
                    .sum();
                let pen = coef.dot(&(&s * &coef));
                let fit_term = if scale_known {
                    rss + pen
                } else {
                    let null_dim = design.z.ncols() - design.ranks.iter().sum::<usize>();
                    (n - null_dim as f64) * (rss + pen).ln()
                };
                0.5 * (fit_term + log_det - log_det_s)
            }
        };
        Some(PwlsSolution {
            coef,
            influence_coef,
            score,
        })
    }

    /// Minimises the criterion over log10(lambda): a cyclic coordinate search
    /// over the grid, after which each coordinate is refined by golden-section search within one grid step of its
    /// current value, cycling until the parameters settle, so the selected
    /// parameters (and the fit) are a continuous function of the response.
    fn select(&self) -> Option<(PwlsSolution, Vec<f64>)> {
        let d = self.design.blocks.len();
        let to_lambdas = |v: &[f64]| v.iter().map(|&e| 10f64.powf(e)).collect::<Vec<_>>();
        let (mut best, mut log_l) = self.grid_search(d)?;
        for _ in 0..REFINE_SWEEPS {
            let mut moved = 0.0f64;
            for j in 0..d {
                let lo = (log_l[j] - LOG10_LAMBDA_STEP).max(LOG10_LAMBDA_MIN);
                let hi = (log_l[j] + LOG10_LAMBDA_STEP).min(LOG10_LAMBDA_MAX);
                let mut trial = log_l.clone();
                let mut score_at = |e: f64| {
                    trial[j] = e;
                    self.solve(&to_lambdas(&trial))
                        .map_or(f64::INFINITY, |s| s.score)
                };
                let e = golden_section(&mut score_at, lo, hi);
                let mut cand = log_l.clone();
                cand[j] = e;
                if let Some(sol) = self.solve(&to_lambdas(&cand)) {
                    if sol.score < best.score {
                        moved = moved.max((cand[j] - log_l[j]).abs());
                        best = sol;
                        log_l = cand;
                    }
                }
            }
            if moved < REFINE_TOL {
                break;
            }
        }
        Some((best, to_lambdas(&log_l)))
    }

    fn grid_search(&self, d: usize) -> Option<(PwlsSolution, Vec<f64>)> {
        let grid = lambda_grid();
        let lambdas_of = |idx: &[usize]| idx.iter().map(|&g| grid[g]).collect::<Vec<_>>();
        let mut idx = vec![grid.iter().position(|&l| l >= 1.0).unwrap_or(0); d];
        let mut best = self.solve(&lambdas_of(&idx))?;
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for j in 0..d {
                let mut current = idx[j];
                for g in 0..grid.len() {
                    if g == current {
                        continue;
                    }
                    idx[j] = g;
                    match self.solve(&lambdas_of(&idx)) {
                        Some(sol) if sol.score < best.score => {
                            best = sol;
                            current = g;
                            changed = true;
                        }
                        _ => idx[j] = current,
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Some((best, idx.iter().map(|&g| grid[g].log10()).collect()))
    }
}

/// Minimiser of a unimodal function on `[lo, hi]`.
fn golden_section(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > GOLDEN_TOL {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

impl SplineAdditive {
    pub fn with_fixed_lambda(basis_size: usize, lambdas: Vec<f64>) -> Self {
        Self {
            basis_size,
            smoothing: Smoothing::Fixed(lambdas),
        }
    }

    fn build_design(&self, x: &DMatrix<f64>) -> Result<(Vec<CovariateBasis>, AdditiveDesign)> {
        let q = self.basis_size;
        let (n, d) = x.shape();
        let p = 1 + d * (q - 1);
        if n <= p {
            return Err(Error::UnderdeterminedDesign { rows: n, cols: p });
        }
        let raw_pen = difference_penalty(q);
        let mut bases = Vec::with_capacity(d);
        let mut z = DMatrix::zeros(n, p);
        z.column_mut(0).fill(1.0);
        let mut penalties = Vec::with_capacity(d);
        let mut blocks = Vec::with_capacity(d);
        let mut ranks = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let basis = CovariateBasis::new(&col, q)
                .map_err(|_| Error::invalid(format!("spline covariate {} has no spread", j + 1)))?;
            let zj = basis.constrained(&col, q);
            let start = 1 + j * (q - 1);
            z.view_mut((0, start), (n, q - 1)).copy_from(&zj);
            let s = basis.null_space.tr_mul(&raw_pen) * &basis.null_space;
            // put the penalty on the scale of the block's cross-product so a
            // single grid serves every covariate
            let scale = zj.tr_mul(&zj).norm() / s.norm();
            let s = s * scale;
            let eig = s.clone().symmetric_eigenvalues();
            let top = eig.max();
            ranks.push(eig.iter().filter(|&&v| v > 1e-9 * top).count());
            penalties.push(s);
            blocks.push((start, q - 1));
            bases.push(basis);
        }
        Ok((
            bases,
            AdditiveDesign {
                z,
                penalties,
                ranks,
                blocks,
            },
        ))
    }

    pub fn fit_spline(&self, data: &Dataset) -> Result<SplineFit> {
        if self.basis_size < 4 {
            return Err(Error::invalid("basis_size must be at least 4"));
        }
        let d = data.d();
        if let Smoothing::Fixed(l) = &self.smoothing {
            if l.len() != d {
                return Err(Error::invalid(format!(
                    "{} smoothing parameters for {d} covariates",
                    l.len()
                )));
            }
            if l.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::invalid("smoothing parameters must be non-negative"));
            }
        }
        let (bases, design) = self.build_design(data.x())?;
        let n = data.n();
        let y = data.y();
        let mut warnings = Vec::new();
        let criterion = match self.smoothing {
            Smoothing::Reml => Criterion::Reml {
                scale_known: data.family() == Family::Bernoulli,
            },
            _ if data.family() == Family::Bernoulli => Criterion::Ubre,
            _ => Criterion::Gcv,
        };

        // `frozen` smoothing parameters skip the selection
        let select = |w: &DVector<f64>,
                      zw: &DVector<f64>,
                      frozen: Option<&[f64]>|
         -> Result<(PwlsSolution, Vec<f64>)> {
            let problem = Pwls::new(&design, w, zw, criterion);
            let fixed = match &self.smoothing {
                Smoothing::Fixed(l) => Some(l.as_slice()),
                _ => frozen,
            };
            match fixed {
                Some(l) => problem.solve(l).map(|s| (s, l.to_vec())),
                None => problem.select(),
            }
            .ok_or(Error::Singular)
        };

        let (solution, lambdas, weights) = match data.family() {
            Family::Gaussian => {
                let w = DVector::from_element(n, 1.0);
                let (sol, lambdas) = select(&w, y, None)?;
                (sol, lambdas, w)
            }
            Family::Bernoulli => {
                let mut mu = y.map(|v| (v + 0.5) / 2.0);
                let mut eta = mu.map(|m| (m / (1.0 - m)).ln());
                let mut prev: Option<f64> = None;
                let mut out = None;
                let mut converged = false;
                // smoothing parameters are re-selected until they settle (or
                // for a bounded number of iterations), then held fixed so the
                // working-model iteration can converge
                let mut frozen: Option<Vec<f64>> = None;
                let mut last_lambdas: Option<Vec<f64>> = None;
                for iter in 0..PIRLS_MAX_ITER {
                    let w = mu.map(|m| (m * (1.0 - m)).max(1e-10));
                    let zw = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / w[i]);
                    let (sol, lambdas) = select(&w, &zw, frozen.as_deref())?;
                    if frozen.is_none() {
                        let settled = last_lambdas.as_ref().is_some_and(|prev| {
                            prev.iter()
                                .zip(&lambdas)
                                .all(|(a, b)| (a.log10() - b.log10()).abs() < 1e-2)
                        });
                        if settled || iter + 1 >= PIRLS_SELECT_ITER {
                            frozen = Some(lambdas.clone());
                        }
                        last_lambdas = Some(lambdas.clone());
                    }
                    eta = &design.z * &sol.coef;
                    mu = eta.map(logistic);
                    let dev = bernoulli_deviance(y, &mu);
                    // relative deviance change, once the parameters are fixed
                    let done = frozen.is_some()
                        && prev
                            .is_some_and(|p: f64| (dev - p).abs() < PIRLS_TOL * (dev.abs() + 0.1));
                    prev = Some(dev);
                    out = Some((sol, lambdas, w));
                    if done {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    warnings.push(format!(
                        "penalized IRLS did not converge in {PIRLS_MAX_ITER} iterations"
                    ));
                }
                out.expect("at least one iteration")
            }
        };

        if !matches!(self.smoothing, Smoothing::Fixed(_)) {
            for (j, l) in lambdas.iter().enumerate() {
                let e = l.log10();
                if e <= LOG10_LAMBDA_MIN + 1e-3 || e >= LOG10_LAMBDA_MAX - 1e-3 {
                    warnings.push(format!(
                        "selected smoothing parameter for covariate {} on the grid boundary",
                        j + 1
                    ));
                }
            }
        }

        let edf = solution.influence_coef.trace();
        let component_edf = design
            .blocks
            .iter()
            .map(|&(start, len)| {
                (start..start + len)
                    .map(|c| solution.influence_coef[(c, c)])
                    .sum()
            })
            .collect();
        let total_penalty = design.total_penalty(&lambdas);
        let eta = &design.z * &solution.coef;
        let fitted = match data.family() {
            Family::Gaussian => eta,
            Family::Bernoulli => clamp_expectation(Family::Bernoulli, eta.map(logistic)),
        };
        Ok(SplineFit {
            family: data.family(),
            basis_size: self.basis_size,
            bases,
            coef: solution.coef,
            lambdas,
            edf,
            component_edf,
            fitted,
            design_z: design.z,
            total_penalty,
            weights,
            warnings,
        })
    }
}

impl Learner for SplineAdditive {
    fn name(&self) -> &'static str {
        "spline"
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::Spline
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn fit(&self, data: &Dataset, _seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.fit_spline(data)?))
    }
}

#[derive(Debug, Clone)]
pub struct SplineFit {
    family: Family,
    basis_size: usize,
    bases: Vec<CovariateBasis>,
    coef: DVector<f64>,
    /// Selected smoothing parameter per covariate.
    pub lambdas: Vec<f64>,
    /// Trace of the influence matrix at the selected parameters.
    pub edf: f64,
    /// EDF of each centred component (the intercept is not included).
    pub component_edf: Vec<f64>,
    fitted: DVector<f64>,
    design_z: DMatrix<f64>,
    total_penalty: DMatrix<f64>,
    weights: DVector<f64>,
    warnings: Vec<String>,
}

impl SplineFit {
    fn design_for(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.basis_size;
        let n = x.nrows();
        let mut z = DMatrix::zeros(n, self.coef.len());
        z.column_mut(0).fill(1.0);
        for (j, basis) in self.bases.iter().enumerate() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            z.view_mut((0, 1 + j * (q - 1)), (n, q - 1))
                .copy_from(&basis.constrained(&col, q));
        }
        z
    }
}

impl Predictor for SplineFit {
    fn expectation(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let eta = self.design_for(x) * &self.coef;
        match self.family {
            Family::Gaussian => eta,
            Family::Bernoulli => clamp_expectation(Family::Bernoulli, eta.map(logistic)),
        }
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    fn self_dof(&self) -> Option<f64> {
        Some(self.edf)
    }

    fn linear_smoother(&self) -> Option<LinearSmoother> {
        if self.family != Family::Gaussian {
            return None;
        }
        debug_assert!(self.weights.iter().all(|&w| w == 1.0));
        hat_matrix(
            &self.design_z,
            Some(Penalty {
                matrix: &self.total_penalty,
                lambda: 1.0,
            }),
        )
        .ok()
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}
