//! Experiment matrix runner: episodes, aggregation, scoring and reports.

mod config;
mod episode;
mod report;
mod run;

pub use config::{
    preset_names, ActorKind, BackendSpec, CellSpec, ExecutionPlan, ExecutorConfig, ExperimentConfig, ProfileRef,
};
pub use episode::{observation_digest, parse_action, replay, EpisodeRunner, EpisodeTrace, StageOutcome, StepRecord};
pub use report::{
    aggregate, emit_report, render_text, rows_from_csv, rows_to_csv, Aggregated, Aggregation, CsvRow, EpisodeScore,
    Granularity, ReportFormat, ReportRow, ReportTable, RowStatus, Series, SeriesPoint, CSV_HEADER, SCHEMA_VERSION,
};
pub use run::{
    parse_traces, read_traces, run_experiment, run_probe, trace_lines, trace_path, write_traces, CellRun, Experiment,
    ProbeRun, TraceLine,
};

use crate::backend::BackendError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("no traces to aggregate")]
    NoTraces,
    #[error("{0} aggregation left no records")]
    EmptyAfterFilter(Aggregation),
    #[error("replay diverged at step {step}: {detail}")]
    ReplayMismatch { step: u32, detail: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}
