//! Floating-point scalar abstraction.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. The trait adds the pieces `num_traits`
//! does not cover: a dense GEMM kernel, a checkpoint dtype tag and
//! little-endian byte conversion.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// A real floating-point type usable for parameters, gradients and factors.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Checkpoint dtype tag (0 = 64-bit float, 1 = 32-bit float).
    const DTYPE_TAG: u8;
    /// Size of one element in bytes.
    const BYTES: usize;

    /// `c = alpha * a * b + beta * c` over strided row/column views.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are in
    /// elements, so transposed operands are expressed by swapping them.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from exactly [`Scalar::BYTES`] bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Converts an `f64` literal. Infallible for both supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Elementwise sign with `sign(0) = 0` (and `sign(NaN) = NaN`).
    #[inline]
    fn sign0(self) -> Self {
        if self > Self::zero() {
            Self::one()
        } else if self < Self::zero() {
            -Self::one()
        } else {
            self
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $tag:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE_TAG: u8 = $tag;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
                    }
                };
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs buffer too small");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs buffer too small");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output buffer too small");
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                // SAFETY: the asserts above bound every index the kernel touches
                // (non-negative strides, spans within each slice), and `c` is
                // uniquely borrowed so it cannot alias `a` or `b`.
                unsafe {
                    $gemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(bytes);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f64, 0, matrixmultiply::dgemm);
impl_scalar!(f32, 1, matrixmultiply::sgemm);
