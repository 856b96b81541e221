//! Small dense linear algebra: matrices, symmetric eigendecomposition,
//! symmetric matrix powers, norms and a Kronecker-product oracle.

mod eigh;
mod kron;
mod matrix;
mod norms;
mod power;

pub use eigh::{sym_eigh, EigDecomposition, MAX_SWEEPS, OFF_DIAGONAL_TOL, SYMMETRY_TOL};
pub use kron::{kron, KRON_MAX_DIM};
pub use matrix::Matrix;
pub use norms::{matrix_norms, MatrixNorms};
pub use power::{sym_power, sym_power_from};
