//! Task-incremental training with per-task winning subnetworks.

mod config;
mod metrics;
mod run;
mod train;

pub use config::{TilMode, TilRunConfig};
pub use metrics::{metric_acc, metric_bwt, metric_fwt, AccuracyMatrix, TilMetrics};
pub use run::{run_sequence, summarize, PartialRun, RunResult, TaskTiming};
pub use train::{evaluate, predict, probe_future, random_baseline, train_task, TrainedTask};
