use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!("matrix data length {} does not match {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from `f64` row literals. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::from_fn(rows.len(), cols, |i, j| T::lit(rows[i][j]))
    }

    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    fn product(&self, lhs_t: bool, other: &Self, rhs_t: bool) -> Result<Self> {
        let m = if lhs_t { self.cols } else { self.rows };
        let n = if rhs_t { other.rows } else { other.cols };
        let mut out = Self::zeros(m, n);
        out.gemm_into(T::one(), self, lhs_t, other, rhs_t, T::zero())?;
        Ok(out)
    }

    /// `self = alpha * op(a) * op(b) + beta * self`, where `op` optionally transposes.
    pub fn gemm_into(&mut self, alpha: T, a: &Self, a_t: bool, b: &Self, b_t: bool, beta: T) -> Result<()> {
        let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (k2, n) = if b_t { (b.cols, b.rows) } else { (b.rows, b.cols) };
        if k != k2 || self.shape() != (m, n) {
            return Err(Error::contract(format!(
                "matmul shapes do not chain: {:?}{} x {:?}{} into {:?}",
                a.shape(),
                if a_t { "^T" } else { "" },
                b.shape(),
                if b_t { "^T" } else { "" },
                self.shape(),
            )));
        }
        if k == 0 {
            self.map_inplace(|x| x * beta);
            return Ok(());
        }
        let (rsa, csa) = if a_t { (1, a.cols as isize) } else { (a.cols as isize, 1) };
        let (rsb, csb) = if b_t { (1, b.cols as isize) } else { (b.cols as isize, 1) };
        T::gemm(m, k, n, alpha, &a.data, rsa, csa, &b.data, rsb, csb, beta, &mut self.data, n as isize, 1);
        Ok(())
    }

    /// `self * other`
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.product(false, other, false)
    }

    /// `self^T * other`
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        self.product(true, other, false)
    }

    /// `self * other^T`
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        self.product(false, other, true)
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::contract(format!("{op}: shape {:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(T) -> T) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    /// `self = a * self + b * other`, elementwise.
    pub fn blend(&mut self, a: T, other: &Self, b: T) -> Result<()> {
        self.check_same_shape(other, "blend")?;
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x = a * *x + b * y;
        }
        Ok(())
    }

    /// Adds `s` to every diagonal element.
    pub fn add_diagonal(&mut self, s: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += s;
        }
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`, or `None` if not square.
    pub fn asymmetry(&self) -> Option<T> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut worst = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        Some(worst)
    }

    /// Replaces the matrix by `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        debug_assert!(self.is_square());
        let half = T::lit(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (self.data[i * n + j] + self.data[j * n + i]) * half;
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    /// Row-major flattening as an `mn x 1` column.
    pub fn vec_r(&self) -> Self {
        Self { rows: self.data.len(), cols: 1, data: self.data.clone() }
    }

    /// Inverse of [`Matrix::vec_r`].
    pub fn unvec_r(v: &Self, rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(rows, cols, v.data.clone())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect() }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:?} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}
