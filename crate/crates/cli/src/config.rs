//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gdfcv_core::{CriteriaOptions, Family, KSpec, LearnerSpec, RoundDesign, SlopeRounds};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Gdf,
    Cv,
    #[default]
    Compare,
    SweepK,
    SweepSigma,
    Converge,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Gdf => "gdf",
            Task::Cv => "cv",
            Task::Compare => "compare",
            Task::SweepK => "sweep-k",
            Task::SweepSigma => "sweep-sigma",
            Task::Converge => "converge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Simulate {
        family: Family,
        n: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        response: String,
        family: Family,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Simulate {
            family: Family::Gaussian,
            n: 250,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdfSettings {
    /// Points perturbed per round. When absent each learner uses its
    /// recommended value for the data family.
    pub k: Option<KSpec>,
    pub sigma_frac: f64,
    pub perturbations_per_datum: usize,
    pub internal_reps: usize,
    pub replicates: usize,
    pub slope_rounds: Option<SlopeRounds>,
    pub design: RoundDesign,
}

impl Default for GdfSettings {
    fn default() -> Self {
        Self {
            k: None,
            sigma_frac: 0.25,
            perturbations_per_datum: 50,
            internal_reps: 1,
            replicates: 100,
            slope_rounds: None,
            design: RoundDesign::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub folds: usize,
    pub repeats: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            folds: 10,
            repeats: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Values above n are dropped for the dataset at hand.
    pub k_values: Vec<usize>,
    pub k_replicates: usize,
    pub sigma_fracs: Vec<f64>,
    pub sigma_replicates: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            k_values: vec![1, 2, 5, 10, 20, 50, 100, 150, 200, 250],
            k_replicates: 2,
            sigma_fracs: vec![0.125, 0.25, 0.5],
            sigma_replicates: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSettings {
    pub replicates: usize,
    pub k: KSpec,
}

impl Default for ConvergeSettings {
    fn default() -> Self {
        Self {
            replicates: 1000,
            k: KSpec::Count(50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    pub dataset: DatasetSpec,
    pub gdf: GdfSettings,
    pub cv: CvSettings,
    pub sweep: SweepSettings,
    pub converge: ConvergeSettings,
    pub criteria: CriteriaOptions,
    pub models: Vec<LearnerSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::default(),
            seed: 1,
            workers: None,
            dataset: DatasetSpec::default(),
            gdf: GdfSettings::default(),
            cv: CvSettings::default(),
            sweep: SweepSettings::default(),
            converge: ConvergeSettings::default(),
            criteria: CriteriaOptions::default(),
            models: LearnerSpec::defaults(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
