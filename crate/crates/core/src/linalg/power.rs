use crate::error::{Error, Result};
use crate::linalg::{sym_eigh, EigDecomposition, Matrix};
use crate::scalar::Scalar;

/// `A^p = Q diag(lambda_i^p) Q^T` for a symmetric positive semi-definite `A`.
///
/// For negative `p` every eigenvalue is first clamped up to `floor`. An
/// eigenvalue below `-1e-8 * ||A||_F` is treated as a genuinely indefinite
/// input and rejected.
pub fn sym_power<T: Scalar>(a: &Matrix<T>, p: T, floor: T) -> Result<Matrix<T>> {
    let eig = sym_eigh(a)?;
    sym_power_from(&eig, a.frobenius(), p, floor)
}

/// [`sym_power`] on an existing decomposition. `norm` is `||A||_F` of the
/// source matrix, used for the indefiniteness check.
pub fn sym_power_from<T: Scalar>(eig: &EigDecomposition<T>, norm: T, p: T, floor: T) -> Result<Matrix<T>> {
    let lowest = eig.lambda.first().copied().unwrap_or_else(T::zero);
    if p < T::zero() && lowest < -T::lit(1e-8) * norm {
        return Err(Error::numerical("sym_power", format!("negative eigenvalue {lowest} with exponent {p}")));
    }
    let lower = if p < T::zero() { floor } else { T::zero() };
    if p < T::zero() && lower <= T::zero() && eig.lambda.iter().any(|&l| l <= T::zero()) {
        return Err(Error::numerical("sym_power", "singular matrix raised to a negative power without a floor"));
    }
    let out = eig.reconstruct_with(|l| {
        let l = l.max(lower);
        if p == T::zero() {
            T::one()
        } else {
            l.powf(p)
        }
    });
    if !out.is_finite() {
        return Err(Error::numerical("sym_power", "result is not finite"));
    }
    Ok(out)
}
