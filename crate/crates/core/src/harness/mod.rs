//! Deterministic dense-network training harness: networks with manual
//! backprop, losses, tasks, datasets and measurement probes.

pub mod dataset;
pub mod loss;
pub mod net;
pub mod probe;
pub mod task;

pub use dataset::{load_csv, parse_csv, Column, Dataset};
pub use loss::{loss, mse, softmax_cross_entropy, LossKind, Targets};
pub use net::{Activation, ActivationTape, DenseNet, LayerSpec};
pub use probe::{cholesky, measure_activation_shift, whitening_probe, WHITENING_MAX_DIM};
pub use task::{make_task, Batch, NetTask, Objective, QuadraticTask, TaskKind, TaskSpec, QUADRATIC_PARAM};
