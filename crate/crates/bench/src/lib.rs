//! Benchmark harness: seeded trial batches over the eight scenarios,
//! success-rate aggregation and report tables.

pub mod episode;
pub mod fixtures;
pub mod harness;

use thiserror::Error;

pub use episode::{
    bench_backend, reflex_table, run_episode, run_episode_traced, AgentConfig, EpisodeConfig, Outcome, TrialResult,
};
pub use fixtures::{check_fixture, load_fixture, CellCheck, FixtureRow, FixtureTable};
pub use harness::{
    aggregate, emit_report, format_cell, render_report, run_bench, BenchConfig, EvalBatch, EvalRow, ReportFormat, RunMetadata,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("aggregation needs at least one value")]
    EmptyInput,
    #[error(transparent)]
    Scenario(#[from] cortex_sim::SimError),
    #[error(transparent)]
    Registry(#[from] cortex_core::registry::RegistryError),
    #[error(transparent)]
    Memory(#[from] cortex_core::memory::MemoryError),
    #[error(transparent)]
    Rate(#[from] cortex_core::pipeline::RateError),
    #[error(transparent)]
    Backend(#[from] cortex_core::agents::BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}
