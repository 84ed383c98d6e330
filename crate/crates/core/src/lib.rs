//! Proximal policy optimization with an uncertainty-aware exploration gate.
//!
//! The gate compares each state's action under the live actor against the
//! actor from the previous update. When the relative change is small the
//! policy is assumed settled there and the mean action is taken; otherwise a
//! fresh action is sampled. The cut-off is re-estimated every update from the
//! ranked ratios of the interval just finished.
//!
//! [`harness`] wires the pieces into a training loop with CSV telemetry,
//! checkpoints, evaluation, sweeps and SVG plots.

pub mod advantage;
pub mod envs;
pub mod error;
pub mod gate;
pub mod harness;
pub mod numerics;
pub mod policy;
pub mod ppo;

pub use advantage::{compute_advantages, AdvantageConfig, Advantages, RolloutBuffer, Transition};
pub use envs::{EnvKind, EnvSpec, Environment, Lqr, Pendulum, PointMass, StepResult};
pub use error::{Error, Result};
pub use gate::{GateConfig, GateDecision, ThresholdState};
pub use harness::{
    Checkpoint, EvalReport, ExperimentConfig, GateMode, MetricsRow, SchemeSummary, SweepResult, TrainFault,
    TrainOutcome,
};
pub use numerics::{Activation, AdamConfig, AdamState, DenseNet, Gradient, Layer};
pub use policy::{AnnealSchedule, DiagonalGaussian, PolicySnapshot};
pub use ppo::{ppo_update, ActorCritic, PpoConfig, UpdateStats};
