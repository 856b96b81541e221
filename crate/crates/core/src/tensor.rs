//! Named parameter tensors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// An n-dimensional row-major array. Optimizers treat rank-2 tensors as
/// dense layers and everything else as "nonstandard" parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Parameters, gradients or optimizer buffers keyed by name. Ordered so every
/// iteration over a model is deterministic.
pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!("tensor shape {shape:?} needs {numel} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn scalar(x: T) -> Self {
        Self { shape: Vec::new(), data: vec![x] }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` for rank-2 tensors.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Some((m, n)),
            _ => None,
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies a rank-2 tensor into a [`Matrix`].
    pub fn to_matrix(&self) -> Result<Matrix<T>> {
        let (m, n) =
            self.dims2().ok_or_else(|| Error::contract(format!("tensor of shape {:?} is not 2-D", self.shape)))?;
        Matrix::from_vec(m, n, self.data.clone())
    }

    pub fn into_matrix(self) -> Result<Matrix<T>> {
        let (m, n) =
            self.dims2().ok_or_else(|| Error::contract(format!("tensor of shape {:?} is not 2-D", self.shape)))?;
        Matrix::from_vec(m, n, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

impl<T: Scalar> From<Matrix<T>> for Tensor<T> {
    fn from(m: Matrix<T>) -> Self {
        let (r, c) = m.shape();
        Self { shape: vec![r, c], data: m.into_vec() }
    }
}

/// Checks that `grads` has exactly the keys and shapes of `params`.
pub fn check_matching<T: Scalar>(params: &ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
    for (name, p) in params {
        match grads.get(name) {
            None => return Err(Error::contract(format!("missing gradient for parameter `{name}`"))),
            Some(g) if g.shape() != p.shape() => {
                return Err(Error::contract(format!(
                    "gradient for `{name}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = grads.keys().find(|k| !params.contains_key(*k)) {
        return Err(Error::contract(format!("gradient for unknown parameter `{extra}`")));
    }
    Ok(())
}

/// Scales every tensor in the map.
pub fn scale_map<T: Scalar>(map: &ParamMap<T>, s: T) -> ParamMap<T> {
    map.iter().map(|(k, v)| (k.clone(), v.map(|x| x * s))).collect()
}
