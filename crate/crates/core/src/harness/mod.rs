//! Experiment plumbing: configuration, the training loop, evaluation,
//! sweeps, persistence and plots.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod plot;
pub mod sweep;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, GateMode};
pub use evaluate::{evaluate, evaluate_actor, evaluate_policy, evaluate_random, EvalReport};
pub use metrics::{load_metrics, save_metrics, MetricsRow};
pub use plot::emit_plots;
pub use sweep::{spearman, sweep, write_sweep, CellResult, SchemeSummary, SweepResult};
pub use train::{train, train_observed, TrainFault, TrainOutcome, UpdateObserver};
