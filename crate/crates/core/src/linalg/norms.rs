use crate::error::Result;
use crate::linalg::{sym_eigh, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms<T> {
    pub frobenius: T,
    pub spectral: T,
    pub max_abs: T,
}

/// Frobenius, spectral and elementwise-max norms.
///
/// The spectral norm is `sqrt(lambda_max)` of the smaller Gram matrix. It is
/// capped at the Frobenius norm, which it can only exceed through rounding.
pub fn matrix_norms<T: Scalar>(a: &Matrix<T>) -> Result<MatrixNorms<T>> {
    let frobenius = a.frobenius();
    let max_abs = a.max_abs();
    let spectral = if a.rows() == 0 || a.cols() == 0 || max_abs == T::zero() {
        T::zero()
    } else {
        let gram = if a.rows() <= a.cols() { a.matmul_t(a)? } else { a.t_matmul(a)? };
        let top = sym_eigh(&gram)?.lambda_max();
        top.max(T::zero()).sqrt().min(frobenius)
    };
    Ok(MatrixNorms { frobenius, spectral, max_abs })
}
