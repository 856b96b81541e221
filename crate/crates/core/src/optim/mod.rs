//! Optimizers sharing one step interface.
//!
//! [`SPlusState`] is the SPlus whitening optimizer; the rest are the
//! reference baselines it is benchmarked against.

mod adam;
mod sgd;
mod shampoo;
mod signsgd;
mod splus;

pub use adam::{Adam, AdamConfig};
pub use sgd::{Sgd, SgdConfig};
pub use shampoo::{Shampoo, ShampooConfig, ShampooLayer};
pub use signsgd::{SignSgd, SignSgdConfig};
pub use splus::{
    instant_sign, lr_convert, shape_factor, shape_scale, LayerState, SPlusConfig, SPlusLayerState, SPlusState,
    ScalingMode, DEFAULT_SPLUS_LR,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tensor::{ParamMap, Tensor};

/// The step interface every optimizer implements, so a training loop never
/// needs to know which one it is driving.
pub trait Optimizer<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    /// Applies one update to `params` in place.
    fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()>;

    /// Number of completed updates.
    fn steps_taken(&self) -> u64;

    /// Learning rate (after warmup) of the most recent update, or of the
    /// first update when none has happened yet.
    fn current_lr(&self) -> T;

    /// Parameters to evaluate at. Identity unless the optimizer averages iterates.
    fn eval_params(&self, live: &ParamMap<T>) -> Result<ParamMap<T>> {
        Ok(live.clone())
    }

    fn averages_iterates(&self) -> bool {
        false
    }

    /// All internal buffers as named tensors, for checkpointing.
    fn export_state(&self) -> ParamMap<T>;

    /// Restores buffers written by [`Optimizer::export_state`].
    fn import_state(&mut self, state: &ParamMap<T>, steps: u64) -> Result<()>;
}

/// Linear warmup from zero to `peak` over `warmup_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule<T> {
    pub peak: T,
    pub warmup_steps: u64,
}

impl<T: Scalar> LrSchedule<T> {
    pub fn constant(peak: T) -> Self {
        Self { peak, warmup_steps: 0 }
    }

    /// Learning rate for the 1-based update number `step`.
    pub fn at(&self, step: u64) -> T {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.peak
        } else {
            self.peak * T::lit(step as f64) / T::lit(self.warmup_steps as f64)
        }
    }
}

pub(crate) fn divergence_check<T: Scalar>(tensor: &Tensor<T>, step: u64, name: &str) -> Result<()> {
    if tensor.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, layer: name.to_string() })
    }
}

pub(crate) fn put_matrix<T: Scalar>(out: &mut ParamMap<T>, key: String, m: &Matrix<T>) {
    out.insert(key, Tensor::from(m.clone()));
}

pub(crate) fn take_matrix<T: Scalar>(state: &ParamMap<T>, key: &str, shape: (usize, usize)) -> Result<Matrix<T>> {
    let t = take_tensor(state, key, &[shape.0, shape.1])?;
    t.to_matrix()
}

pub(crate) fn take_tensor<'a, T: Scalar>(state: &'a ParamMap<T>, key: &str, shape: &[usize]) -> Result<&'a Tensor<T>> {
    let t = state.get(key).ok_or_else(|| Error::input(format!("optimizer state is missing `{key}`")))?;
    if t.shape() != shape {
        return Err(Error::input(format!("optimizer state `{key}` has shape {:?}, expected {shape:?}", t.shape())));
    }
    Ok(t)
}
