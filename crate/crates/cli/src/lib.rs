//! Configuration, data ingestion and experiment orchestration behind the
//! `gdfcv` command-line tool.

pub mod config;
pub mod ingest;
pub mod record;
pub mod runner;

pub use config::{ExperimentConfig, Task};
pub use record::{EvalCounters, RunRecord, Status};
pub use runner::run;
