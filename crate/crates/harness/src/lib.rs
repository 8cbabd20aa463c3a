//! Ensemble orchestration for the level-spacing laboratory: per-sample
//! probes, append-only record streams, exact aggregation and CSV export.

pub mod aggregate;
pub mod config;
pub mod ensemble;
pub mod probes;

pub use aggregate::{probability_probe, Aggregate, ProbabilityReport};
pub use config::{ExperimentConfig, ProbeConfig};
pub use ensemble::{read_records, run_ensemble, RunSummary};
pub use probes::{measure, EnsembleRecord};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} samples failed (budget is 10%)")]
    FailureBudget { failed: u64, total: u64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("record schema error: {0}")]
    Schema(String),
    #[error("refusing to merge records from different runs: {0}")]
    MixedProbes(String),
}

impl HarnessError {
    /// Process exit code for the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::FailureBudget { .. } => 3,
            HarnessError::InsufficientData(_) => 4,
            HarnessError::Config(_) | HarnessError::Io(_) | HarnessError::Schema(_) | HarnessError::MixedProbes(_) => 2,
        }
    }
}
