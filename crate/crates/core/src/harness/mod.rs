//! Run orchestration: per-seed pipelines with resumable stage artifacts,
//! ablations, multi-seed aggregation and report emission.

mod config;
mod report;
mod run;

pub use config::{Ablation, ClassifierSettings, DataConfig, EndpointConfig, MockSettings, RunConfig, DEFAULT_SEEDS};
pub use report::{aggregate, collect_report, emit_report, format_cell, render_report, ReportFormat, RunReport};
pub use run::{file_checksum, Backends, Pipeline, RunResult, Stage, StageFeatures, TaskData};
