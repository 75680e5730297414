//! The structured record of one run and its long-format result table.

use std::io::Write;

use anyhow::Result;
use gdfcv_core::gdf::{ConvergencePoint, SweepRow};
use gdfcv_core::{CvEstimate, Diagnostics, Family, GdfSummary, ModelComparison};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    /// The run stopped on an error; results hold what finished before it.
    Partial,
}

/// Model fits by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounters {
    /// Refits on perturbed responses.
    pub gdf_refits: u64,
    /// Fits on the unperturbed response used as GDF baselines.
    pub gdf_baseline: u64,
    /// Fits on cross-validation training folds.
    pub cv_folds: u64,
    /// Full-data fits giving the maximised log-likelihood.
    pub cv_full: u64,
}

impl EvalCounters {
    pub fn total(&self) -> u64 {
        self.gdf_refits + self.gdf_baseline + self.cv_folds + self.cv_full
    }

    pub fn add_gdf(&mut self, refits: u64, baseline: u64) {
        self.gdf_refits += refits;
        self.gdf_baseline += baseline;
    }

    pub fn add_cv(&mut self, cv: &CvEstimate) {
        self.cv_folds += cv.fold_evals;
        self.cv_full += cv.model_evals - cv.fold_evals;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub covariates: usize,
    pub family: Family,
    pub prevalence: Option<f64>,
}

/// Running mean of the CV complexity estimate as repeats accumulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConvergencePoint {
    pub repeat: usize,
    pub p_hat: f64,
    pub running_mean: f64,
    pub running_se: f64,
    pub cumulative_evals: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gdf: Option<GdfSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvEstimate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gdf_convergence: Vec<ConvergencePoint>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cv_convergence: Vec<CvConvergencePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub message: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: ExperimentConfig,
    pub dataset: Option<DatasetSummary>,
    pub models: Vec<ModelResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ModelComparison>,
    pub counters: EvalCounters,
    pub total_model_evals: u64,
    pub wall_time_secs: f64,
    pub warnings: Vec<Warning>,
}

impl RunRecord {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: Status::Complete,
            error: None,
            config,
            dataset: None,
            models: Vec::new(),
            comparison: None,
            counters: EvalCounters::default(),
            total_model_evals: 0,
            wall_time_secs: 0.0,
            warnings: Vec::new(),
        }
    }

    pub fn set_warnings(&mut self, diagnostics: &Diagnostics) {
        self.warnings = diagnostics
            .iter()
            .map(|(message, count)| Warning {
                message: message.to_string(),
                count,
            })
            .collect();
    }

    /// One row per reported value: `task, model, parameter, replicate, value`.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for m in &self.models {
            let mut push = |task: &str, parameter: String, replicate: usize, value: f64| {
                rows.push(ResultRow {
                    task: task.to_string(),
                    model: m.model.clone(),
                    parameter,
                    replicate,
                    value,
                })
            };
            if let Some(g) = &m.gdf {
                for (r, e) in g.estimates.iter().enumerate() {
                    push("gdf", e.k.to_string(), r, e.gdf);
                }
            }
            if let Some(cv) = &m.cv {
                for (r, (ell_cv, ell_m)) in cv.per_repeat.iter().enumerate() {
                    push("cv_ell", String::new(), r, *ell_cv);
                    push("cv_p_hat", String::new(), r, ell_m - ell_cv);
                }
            }
            for s in &m.sweep {
                push("sweep", s.parameter.to_string(), s.replicate, s.gdf);
            }
            for c in &m.gdf_convergence {
                push("converge_gdf", String::new(), c.replicate, c.running_mean);
            }
            for c in &m.cv_convergence {
                push("converge_cv", String::new(), c.repeat, c.running_mean);
            }
        }
        if let Some(cmp) = &self.comparison {
            for r in &cmp.rows {
                for (quantity, value) in [
                    ("complexity", r.complexity),
                    ("aicc", r.aicc),
                    ("cv_deviance", r.cv_deviance),
                    ("w_aic", r.w_aic),
                    ("w_cv", r.w_cv),
                ] {
                    rows.push(ResultRow {
                        task: format!("compare_{quantity}"),
                        model: r.name.clone(),
                        parameter: String::new(),
                        replicate: 0,
                        value,
                    });
                }
            }
        }
        rows
    }

    pub fn write_json(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Long-format table. A partial run ends with a `# partial` line.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let rows = self.rows();
        for row in &rows {
            w.serialize(row)?;
        }
        if rows.is_empty() {
            w.write_record(["task", "model", "parameter", "replicate", "value"])?;
        }
        let mut inner = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        if self.status == Status::Partial {
            writeln!(inner, "# partial")?;
        }
        inner.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub model: String,
    pub parameter: String,
    pub replicate: usize,
    pub value: f64,
}
