//! SPlus: a whitening optimizer that takes the instantaneous sign of the
//! momentum in a cached eigenbasis of the Kronecker gradient factors, plus
//! baseline optimizers and a small training harness to compare them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the 64-bit variants used by the benchmarks.

// `!(x > 0.0)` is used on purpose so NaN lands on the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use linalg::{kron, matrix_norms, sym_eigh, sym_power, EigDecomposition, Matrix, MatrixNorms};
pub use optim::{
    Adam, AdamConfig, LrSchedule, Optimizer, SPlusConfig, SPlusState, ScalingMode, Sgd, SgdConfig, Shampoo,
    ShampooConfig, SignSgd, SignSgdConfig,
};
pub use rng::CounterRng;
pub use scalar::Scalar;
pub use tensor::{ParamMap, Tensor};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamMap64 = ParamMap<f64>;
pub type SPlus64 = SPlusState<f64>;
pub type SPlus32 = SPlusState<f32>;
pub type SPlusConfig64 = SPlusConfig<f64>;
pub type Adam64 = Adam<f64>;
pub type Shampoo64 = Shampoo<f64>;
