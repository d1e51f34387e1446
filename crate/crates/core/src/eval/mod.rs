//! Evaluation: QoE scoring, observer accuracy against ground truth,
//! pipeline timing and closed-loop gameplay runs.

pub mod accuracy;
pub mod endtoend;
pub mod perf;
pub mod qoe;

use thiserror::Error;

pub use accuracy::{accuracy_report, AccuracyReport, RunArtifacts, ThroughputPoint};
pub use endtoend::{compare_policies, run_endtoend, Comparison, EndToEndReport, Policy, Scenario, Tick};
pub use perf::{time_pipeline, TimingReport};
pub use qoe::{normalize, qoe, QoeInputs, QoeWeights, RawQoe};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{name} = {value} is outside [0, 1]")]
    UnnormalizedInput { name: &'static str, value: f64 },
    #[error("empty series")]
    EmptySeries,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Abr(#[from] crate::abr::AbrError),
    #[error(transparent)]
    Wire(#[from] crate::wire::WireError),
    #[error(transparent)]
    Trace(#[from] crate::dci::trace::TraceError),
    #[error(transparent)]
    Config(#[from] crate::rrc::ConfigError),
    #[error(transparent)]
    Dci(#[from] crate::dci::DciError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
