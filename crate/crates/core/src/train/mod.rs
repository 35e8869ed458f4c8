//! Optimizer, metrics and the schedule-driven training loop.

pub mod config;
pub mod metrics;
pub mod optimizer;
pub mod run;
pub mod trainer;

pub use config::TrainConfig;
pub use metrics::{metrics_csv, parse_metrics_csv, read_metrics, MetricsRecord, CSV_HEADER};
pub use optimizer::{grad_clip, grad_norm, optimizer_step, OptimizerConfig, OptimizerState};
pub use run::RunWriter;
pub use trainer::{matches_terminal_state, sigma_prompts, train_loop, BestSnapshot, NoHooks, TrainHooks, TrainOutcome};
