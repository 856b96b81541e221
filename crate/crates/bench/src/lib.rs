//! Benchmark runner for the SPlus optimizer lab: training runs, sweeps,
//! the steps-to-baseline metric, run records and binary checkpoints.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod record;
pub mod runner;
pub mod sweep;
pub mod timer;

pub use checkpoint::Checkpoint;
pub use config::{ConfigFile, OptimizerSpec, RunConfig};
pub use metrics::{steps_to_baseline, wallclock_to_baseline, StepsTo};
pub use record::{EvalPoint, RunRecord, Status, SweepIndex};
pub use runner::{run, Trainer};
