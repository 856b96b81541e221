//! Symmetric eigendecomposition.
//!
//! Small matrices use cyclic Jacobi rotations. Larger ones are reduced to
//! tridiagonal form by Householder reflections and finished with implicit
//! QL iterations, which is an order of magnitude cheaper at d = 512.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Maximum number of full cyclic sweeps before giving up.
pub const MAX_SWEEPS: usize = 30;

/// Relative off-diagonal Frobenius mass at which the iteration stops.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Largest dimension handled by Jacobi; above it the tridiagonal QL path runs.
pub const JACOBI_MAX_DIM: usize = 64;

/// QL iteration budget per eigenvalue.
const MAX_QL_ITERATIONS: usize = 60;

/// Relative tolerance for accepting an input as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// `A = Q diag(lambda) Q^T` with orthonormal columns in `q` and ascending
/// eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EigDecomposition<T> {
    pub q: Matrix<T>,
    pub lambda: Vec<T>,
}

impl<T: Scalar> EigDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// `Q f(Lambda) Q^T`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let d = self.dim();
        let mut scaled = self.q.clone();
        for i in 0..d {
            for j in 0..d {
                scaled[(i, j)] *= f(self.lambda[j]);
            }
        }
        let mut out = scaled.matmul_t(&self.q).expect("square factors");
        out.symmetrize();
        out
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        self.reconstruct_with(|l| l)
    }

    pub fn lambda_max(&self) -> T {
        self.lambda.last().copied().unwrap_or_else(T::zero)
    }
}

fn tolerance<T: Scalar>(rel: f64) -> T {
    T::lit(rel).max(T::epsilon() * T::lit(4.0))
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back ascending. Each eigenvector is normalized so its
/// largest-magnitude component is positive (first index wins on ties), which
/// makes the output a deterministic function of the input.
pub fn sym_eigh<T: Scalar>(a: &Matrix<T>) -> Result<EigDecomposition<T>> {
    if !a.is_square() {
        return Err(Error::contract(format!("sym_eigh needs a square matrix, got {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::numerical("sym_eigh", "input contains non-finite values"));
    }
    let n = a.rows();
    let scale = a.max_abs();
    let asym = a.asymmetry().unwrap_or_else(T::zero);
    if asym > tolerance::<T>(SYMMETRY_TOL) * scale.max(T::one()) {
        return Err(Error::contract(format!("sym_eigh input is not symmetric (max |a_ij - a_ji| = {asym})")));
    }

    let mut work = a.clone();
    work.symmetrize();
    // Rows of `vt` are the eigenvectors; rotating rows keeps memory access contiguous.
    let (diag, vt) = if n <= JACOBI_MAX_DIM {
        let mut vt = Matrix::<T>::identity(n);
        jacobi_sweeps(&mut work, &mut vt)?;
        ((0..n).map(|i| work[(i, i)]).collect::<Vec<T>>(), vt)
    } else {
        tridiagonal_ql(work)?
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues").then(i.cmp(&j)));

    let mut q = Matrix::<T>::zeros(n, n);
    let mut lambda = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        lambda.push(diag[src]);
        let v = vt.row(src);
        let mut pivot = 0;
        for (k, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = k;
            }
        }
        let flip = v[pivot] < T::zero();
        for (k, &x) in v.iter().enumerate() {
            q[(k, col)] = if flip { -x } else { x };
        }
    }
    Ok(EigDecomposition { q, lambda })
}

fn off_diagonal_norm<T: Scalar>(a: &Matrix<T>) -> T {
    let n = a.rows();
    let mut s = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let x = a[(i, j)];
            s += x * x;
        }
    }
    (s + s).sqrt()
}

/// Rotates rows `p < q` of `m`: `row_p <- c row_p - s row_q`, `row_q <- s row_p + c row_q`.
#[inline]
fn rotate_rows<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn jacobi_sweeps<T: Scalar>(a: &mut Matrix<T>, vt: &mut Matrix<T>) -> Result<()> {
    let n = a.rows();
    if n < 2 {
        return Ok(());
    }
    let norm = a.frobenius();
    if norm == T::zero() {
        return Ok(());
    }
    let tol = tolerance::<T>(OFF_DIAGONAL_TOL) * norm;
    // Entries below this can never keep the total off-diagonal mass above `tol`.
    let skip = tol / T::lit(n as f64);
    let two = T::lit(2.0);

    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(a) < tol {
            return Ok(());
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= skip {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (two * apq);
                let t = if theta.abs() > T::lit(1e150) {
                    T::one() / (two * theta)
                } else {
                    let t = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -t
                    } else {
                        t
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                rotate_rows(a, p, q, c, s);
                // Mirror the rotated rows into the columns; the 2x2 block is set exactly.
                for k in 0..n {
                    if k != p && k != q {
                        a[(k, p)] = a[(p, k)];
                        a[(k, q)] = a[(q, k)];
                    }
                }
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();

                rotate_rows(vt, p, q, c, s);
            }
        }
    }
    if off_diagonal_norm(a) < tol {
        return Ok(());
    }
    Err(Error::numerical("sym_eigh", format!("Jacobi iteration did not converge in {MAX_SWEEPS} sweeps (n = {n})")))
}

/// Householder tridiagonalization followed by implicit QL with Wilkinson
/// shifts (the EISPACK tred2 / tql2 pair). Takes a symmetric matrix and
/// returns its eigenvalues, unsorted, with the eigenvectors as rows.
///
/// The classic formulation indexes `V[k][j]` with `k` innermost; storing
/// `W = V^T` makes those loops contiguous. `w[j * n + k]` is `V[k][j]`.
fn tridiagonal_ql<T: Scalar>(a: Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = a.rows();
    let mut w = a.into_vec();
    let at = |k: usize, j: usize| j * n + k;
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];

    for j in 0..n {
        d[j] = w[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for &x in &d[..i] {
            scale += x.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = w[at(i - 1, j)];
                w[at(i, j)] = T::zero();
                w[at(j, i)] = T::zero();
            }
        } else {
            for x in &mut d[..i] {
                *x /= scale;
                h += *x * *x;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for x in &mut e[..i] {
                *x = T::zero();
            }
            for j in 0..i {
                f = d[j];
                w[at(j, i)] = f;
                g = e[j] + w[at(j, j)] * f;
                let col = &w[j * n..j * n + i];
                for k in (j + 1)..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                let col = &mut w[j * n..j * n + i];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = w[at(i - 1, j)];
                w[at(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }

    // Accumulate the reflections.
    for i in 0..n - 1 {
        w[at(n - 1, i)] = w[at(i, i)];
        w[at(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = w[at(k, i + 1)] / h;
            }
            let (lo, hi) = w.split_at_mut((i + 1) * n);
            let src = &hi[..=i];
            for j in 0..=i {
                let dst = &mut lo[j * n..j * n + i + 1];
                let mut g = T::zero();
                for k in 0..=i {
                    g += src[k] * dst[k];
                }
                for k in 0..=i {
                    dst[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            w[at(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = w[at(n - 1, j)];
        w[at(n - 1, j)] = T::zero();
    }
    w[at(n - 1, n - 1)] = T::one();
    e[0] = T::zero();

    // Implicit QL on the tridiagonal (d, e).
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let eps = T::epsilon();
    let two = T::lit(2.0);
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::numerical(
                        "sym_eigh",
                        format!("QL iteration did not converge for eigenvalue {l} (n = {n})"),
                    ));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for x in &mut d[l + 2..] {
                    *x -= h;
                }
                f += h;

                p = d[m];
                let (mut c, mut c2, mut c3) = (T::one(), T::one(), T::one());
                let el1 = e[l + 1];
                let (mut s, mut s2) = (T::zero(), T::zero());
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = w.split_at_mut((i + 1) * n);
                    let vi = &mut lo[i * n..];
                    for (x, y) in vi.iter_mut().zip(hi[..n].iter_mut()) {
                        let hk = *y;
                        *y = s * *x + c * hk;
                        *x = c * *x - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("sym_eigh", "QL iteration produced non-finite eigenvalues"));
    }
    Ok((d, Matrix::from_vec(n, n, w)?))
}
