//! Training orchestration, evaluation and the evaluation-size study.

pub mod analyze;
pub mod config;
pub mod policies;
pub mod train;

pub use analyze::{analyze, analyze_with_logs, eval_variance_study, run_dialogue, variance_csv, VarianceRow};
pub use config::{Arm, CheckpointPolicy, RunConfig, DEFAULT_STEPS, FULL_SCALE_STEPS};
pub use policies::{ActorPolicy, DialoguePolicy, EmptyPolicy, OraclePolicy, RandomPolicy};
pub use train::{metrics_csv, resume_training, run_training, Checkpoint, MetricRow, RunSummary, Trainer, CSV_COLUMNS};
