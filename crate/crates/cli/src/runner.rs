//! Executes an [`ExperimentConfig`] on a worker pool and records the results.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use gdfcv_core::gdf::convergence_points;
use gdfcv_core::seed;
use gdfcv_core::stats::running_mean_se;
use gdfcv_core::{
    compare_models, repeated_cv, replicate_gdf, simulate_bernoulli, simulate_gaussian, sweep_k,
    sweep_sigma, Dataset, Diagnostics, Family, LearnerSpec, PlanTemplate,
};

use crate::config::{DatasetSpec, ExperimentConfig, Task};
use crate::ingest::ingest_csv;
use crate::record::{CvConvergencePoint, DatasetSummary, ModelResult, RunRecord, Status};

pub const RECORD_FILE: &str = "run.json";
pub const TABLE_FILE: &str = "results.csv";

const PURPOSE_GDF: u64 = 0;
const PURPOSE_CV: u64 = 1;

pub fn load_dataset(spec: &DatasetSpec, diag: &mut Diagnostics) -> Result<Dataset> {
    match spec {
        DatasetSpec::Simulate { family, n, seed } => {
            let sim = match family {
                Family::Gaussian => simulate_gaussian(*n, *seed)?,
                Family::Bernoulli => simulate_bernoulli(*n, *seed)?,
            };
            if sim.retries > 0 {
                diag.warn_n(
                    "simulation redrawn to obtain both classes",
                    sim.retries.into(),
                );
            }
            Ok(sim.data)
        }
        DatasetSpec::Csv {
            path,
            response,
            family,
        } => ingest_csv(path, response, *family),
    }
}

/// Display names, made unique by suffixing the position of repeated kinds.
pub fn model_names(models: &[LearnerSpec]) -> Vec<String> {
    models
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let kind = spec.kind();
            if models.iter().filter(|s| s.kind() == kind).count() > 1 {
                format!("{kind}_{}", m + 1)
            } else {
                kind.to_string()
            }
        })
        .collect()
}

fn task_tag(task: Task) -> u64 {
    match task {
        Task::Gdf => 1,
        Task::Cv => 2,
        Task::Compare => 3,
        Task::SweepK => 4,
        Task::SweepSigma => 5,
        Task::Converge => 6,
    }
}

/// Seed of one (task, model, purpose) cell; sweeps and replicates fan out
/// further from it.
pub fn cell_seed(config: &ExperimentConfig, model: usize, purpose: u64) -> u64 {
    seed::derive(config.seed, &[task_tag(config.task), model as u64, purpose])
}

fn template(config: &ExperimentConfig, spec: &LearnerSpec, family: Family) -> PlanTemplate {
    let recommended = PlanTemplate::defaults_for(spec.kind(), family);
    let g = &config.gdf;
    PlanTemplate {
        k: g.k.unwrap_or(recommended.k),
        sigma_frac: g.sigma_frac,
        perturbations_per_datum: g.perturbations_per_datum,
        internal_reps: g.internal_reps,
        slope_rounds: g.slope_rounds,
        design: g.design,
    }
}

/// Runs `config` on a pool of `config.workers` threads. When `out` is given,
/// `run.json` and `results.csv` are written there, also when the run fails
/// (marked partial).
pub fn run(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunRecord> {
    let start = Instant::now();
    let workers = match config.workers {
        Some(0) => anyhow::bail!("workers must be at least 1"),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;

    let mut record = RunRecord::new(config.clone());
    let mut diag = Diagnostics::new();
    let outcome = pool.install(|| execute(config, &mut record, &mut diag));
    if let Err(e) = &outcome {
        record.status = Status::Partial;
        record.error = Some(format!("{e:#}"));
    }
    record.total_model_evals = record.counters.total();
    record.wall_time_secs = start.elapsed().as_secs_f64();
    record.set_warnings(&diag);

    if let Some(dir) = out {
        write_outputs(&record, dir)?;
    }
    outcome.map(|()| record)
}

pub fn write_outputs(record: &RunRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = dir.join(RECORD_FILE);
    record.write_json(std::io::BufWriter::new(
        std::fs::File::create(&json).with_context(|| format!("creating {}", json.display()))?,
    ))?;
    let csv = dir.join(TABLE_FILE);
    record.write_csv(std::io::BufWriter::new(
        std::fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?,
    ))?;
    Ok(())
}

fn execute(
    config: &ExperimentConfig,
    record: &mut RunRecord,
    diag: &mut Diagnostics,
) -> Result<()> {
    if config.models.is_empty() {
        anyhow::bail!("no models configured");
    }
    let data = load_dataset(&config.dataset, diag).context("loading dataset")?;
    let family = data.family();
    record.dataset = Some(DatasetSummary {
        n: data.n(),
        covariates: data.d(),
        family,
        prevalence: (family == Family::Bernoulli).then(|| data.prevalence()),
    });
    let names = model_names(&config.models);
    let mut complexities = Vec::new();
    let mut cvs = Vec::new();

    for (m, (spec, name)) in config.models.iter().zip(&names).enumerate() {
        let learner = spec.as_learner();
        let gdf_seed = cell_seed(config, m, PURPOSE_GDF);
        let cv_seed = cell_seed(config, m, PURPOSE_CV);
        let tmpl = template(config, spec, family);
        let mut result = ModelResult {
            model: name.clone(),
            ..Default::default()
        };
        let context = || format!("model {name}");

        if matches!(config.task, Task::Gdf | Task::Compare) {
            let plan = tmpl
                .resolve(data.n(), family, gdf_seed)
                .with_context(context)?;
            let summary = replicate_gdf(learner, &data, &plan, config.gdf.replicates)
                .with_context(context)?;
            record
                .counters
                .add_gdf(summary.model_evals, summary.baseline_evals);
            diag.merge(&summary.diagnostics.scoped(name));
            complexities.push(summary.mean);
            result.gdf = Some(summary);
        }
        if matches!(config.task, Task::Cv | Task::Compare) {
            let cv = repeated_cv(learner, &data, config.cv.folds, config.cv.repeats, cv_seed)
                .with_context(context)?;
            record.counters.add_cv(&cv);
            diag.merge(&cv.diagnostics.scoped(name));
            cvs.push(cv.clone());
            result.cv = Some(cv);
        }
        match config.task {
            Task::SweepK => {
                let ks: Vec<usize> = config
                    .sweep
                    .k_values
                    .iter()
                    .copied()
                    .filter(|&k| k <= data.n())
                    .collect();
                let rows = sweep_k(
                    learner,
                    &data,
                    &ks,
                    config.sweep.k_replicates,
                    &tmpl,
                    gdf_seed,
                )
                .with_context(context)?;
                for r in &rows {
                    record.counters.add_gdf(r.model_evals, r.baseline_evals);
                    diag.merge(&r.diagnostics.scoped(name));
                }
                result.sweep = rows;
            }
            Task::SweepSigma => {
                let rows = sweep_sigma(
                    learner,
                    &data,
                    &config.sweep.sigma_fracs,
                    config.sweep.sigma_replicates,
                    &tmpl,
                    gdf_seed,
                )
                .with_context(context)?;
                for r in &rows {
                    record.counters.add_gdf(r.model_evals, r.baseline_evals);
                    diag.merge(&r.diagnostics.scoped(name));
                }
                result.sweep = rows;
            }
            Task::Converge => {
                let reps = config.converge.replicates;
                let plan = PlanTemplate {
                    k: config.converge.k,
                    ..tmpl
                }
                .resolve(data.n(), family, gdf_seed)
                .with_context(context)?;
                let summary = replicate_gdf(learner, &data, &plan, reps).with_context(context)?;
                record
                    .counters
                    .add_gdf(summary.model_evals, summary.baseline_evals);
                diag.merge(&summary.diagnostics.scoped(name));
                result.gdf_convergence = convergence_points(&summary);

                let cv = repeated_cv(learner, &data, config.cv.folds, reps, cv_seed)
                    .with_context(context)?;
                record.counters.add_cv(&cv);
                diag.merge(&cv.diagnostics.scoped(name));
                let p_hats: Vec<f64> = cv.per_repeat.iter().map(|(l_cv, l_m)| l_m - l_cv).collect();
                let per_repeat = cv.model_evals / cv.repeats as u64;
                result.cv_convergence = running_mean_se(&p_hats)
                    .into_iter()
                    .zip(&p_hats)
                    .enumerate()
                    .map(
                        |(r, ((running_mean, running_se), &p_hat))| CvConvergencePoint {
                            repeat: r + 1,
                            p_hat,
                            running_mean,
                            running_se,
                            cumulative_evals: per_repeat * (r as u64 + 1),
                        },
                    )
                    .collect();
            }
            Task::Gdf | Task::Cv | Task::Compare => {}
        }
        record.models.push(result);
    }

    if config.task == Task::Compare {
        record.comparison = Some(compare_models(
            &names,
            &complexities,
            &cvs,
            data.n(),
            config.criteria,
        )?);
    }
    Ok(())
}
