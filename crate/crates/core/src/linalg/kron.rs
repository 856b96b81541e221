use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Largest factor dimension accepted by [`kron`]. The full product is only
/// ever formed as a brute-force oracle.
pub const KRON_MAX_DIM: usize = 8;

/// Kronecker product: block `(i, j)` of the result is `a[i, j] * b`.
///
/// Together with row-major flattening this gives
/// `kron(A, B) vec_r(G) = vec_r(A G B^T)`.
pub fn kron<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    if [ar, ac, br, bc].iter().any(|&d| d > KRON_MAX_DIM) {
        return Err(Error::contract(format!(
            "kron is an oracle for factors up to {KRON_MAX_DIM}x{KRON_MAX_DIM}, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Matrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)]))
}
