use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gdfcv_cli::config::{DatasetSpec, ExperimentConfig, Task};
use gdfcv_cli::{ingest, runner};
use gdfcv_core::{AiccCorrection, CvWeightSign, Diagnostics, Family};

/// Model complexity by generalised degrees of freedom and cross-validation.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated dataset as CSV.
    Simulate {
        #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
        family: FamilyArg,
        #[arg(long, default_value_t = 250)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GDF by perturbation for every configured model.
    Gdf(RunArgs),
    /// Repeated K-fold cross-validated log-likelihood.
    Cv(RunArgs),
    /// GDF over a grid of k values or perturbation strengths.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepOver::K)]
        over: SweepOver,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Running means of GDF and CV complexity over replicates.
    Converge(RunArgs),
    /// AICc from GDF next to CV deviance, with model weights.
    Compare(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Bernoulli,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Bernoulli => Family::Bernoulli,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepOver {
    K,
    Sigma,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    /// 2p(p+1)/(n-p-1)
    Standard,
    /// p(p+1)/(n-p-1)
    Unscaled,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightSignArg {
    /// exp(ell_cv - max): the best cross-validated model gets most weight
    BestFavoured,
    /// exp(max - ell_cv)
    Inverted,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; defaults for every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for run.json and results.csv.
    #[arg(long, default_value = "gdfcv-out")]
    out: PathBuf,
    /// Small-sample term of AICc.
    #[arg(long, value_enum)]
    aicc_correction: Option<CorrectionArg>,
    /// Sign convention of cross-validation weights.
    #[arg(long, value_enum)]
    cv_weight_sign: Option<WeightSignArg>,
}

impl RunArgs {
    fn config(&self, task: Task) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        c.task = task;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(w) = self.workers {
            c.workers = Some(w);
        }
        if let Some(a) = self.aicc_correction {
            c.criteria.correction = match a {
                CorrectionArg::Standard => AiccCorrection::Standard,
                CorrectionArg::Unscaled => AiccCorrection::Unscaled,
            };
        }
        if let Some(s) = self.cv_weight_sign {
            c.criteria.cv_sign = match s {
                WeightSignArg::BestFavoured => CvWeightSign::BestFavoured,
                WeightSignArg::Inverted => CvWeightSign::Inverted,
            };
        }
        Ok(c)
    }
}

fn simulate(family: FamilyArg, n: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let spec = DatasetSpec::Simulate {
        family: family.into(),
        n,
        seed,
    };
    let mut diag = Diagnostics::new();
    let data = runner::load_dataset(&spec, &mut diag)?;
    for (message, count) in diag.iter() {
        eprintln!("warning: {message} ({count}x)");
    }
    match out {
        Some(path) => {
            let file = std::fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            ingest::write_csv(&data, std::io::BufWriter::new(file))
        }
        None => ingest::write_csv(&data, std::io::stdout().lock()),
    }
}

fn execute(args: &RunArgs, task: Task) -> Result<()> {
    let config = args.config(task)?;
    let record = runner::run(&config, Some(&args.out))?;
    for w in &record.warnings {
        eprintln!("warning: {} ({}x)", w.message, w.count);
    }
    eprintln!(
        "{} finished: {} model evaluations in {:.1}s; results in {}",
        task.name(),
        record.total_model_evals,
        record.wall_time_secs,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            family,
            n,
            seed,
            out,
        } => simulate(family, n, seed, out),
        Command::Gdf(a) => execute(&a, Task::Gdf),
        Command::Cv(a) => execute(&a, Task::Cv),
        Command::Sweep { over, run } => execute(
            &run,
            match over {
                SweepOver::K => Task::SweepK,
                SweepOver::Sigma => Task::SweepSigma,
            },
        ),
        Command::Converge(a) => execute(&a, Task::Converge),
        Command::Compare(a) => execute(&a, Task::Compare),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
