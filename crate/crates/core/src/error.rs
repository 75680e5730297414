use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate sigma: all residuals are zero")]
    DegenerateSigma,

    #[error("underdetermined design: {rows} rows for {cols} columns")]
    UnderdeterminedDesign { rows: usize, cols: usize },

    #[error("rank-deficient design ({cols} columns, numerical rank {rank})")]
    RankDeficient { cols: usize, rank: usize },

    #[error("singular system")]
    Singular,

    #[error("no finite MLE: coefficients diverged (norm {norm:.3e})")]
    NoFiniteMle { norm: f64 },

    #[error("cannot stratify: {0}")]
    CannotStratify(String),

    #[error("correction undefined: n - p - 1 = {0} is not positive")]
    CorrectionUndefined(f64),

    #[error("unstable estimation: {dropped} of {rounds} rounds failed")]
    UnstableEstimation { dropped: usize, rounds: usize },

    #[error("could not keep both classes present after {0} flip retries")]
    ClassPreservation(u32),

    #[error("insufficient coverage: datum {index} perturbed in {count} rounds, need at least 2")]
    InsufficientCoverage { index: usize, count: usize },

    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
