//! Scalar losses and their gradients with respect to network outputs.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Squared error summed over outputs, averaged over the batch.
    Mse,
    SoftmaxCrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "softmax_cross_entropy" | "xent" => Ok(Self::SoftmaxCrossEntropy),
            other => Err(Error::input(format!("unknown loss `{other}` (mse|softmax_cross_entropy)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    Dense(Matrix<T>),
    Labels(Vec<usize>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Self::Dense(m) => m.rows(),
            Self::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Returns the mean loss and its gradient with respect to `outputs`.
pub fn loss<T: Scalar>(outputs: &Matrix<T>, targets: &Targets<T>, kind: LossKind) -> Result<(T, Matrix<T>)> {
    match (kind, targets) {
        (LossKind::Mse, Targets::Dense(y)) => mse(outputs, y),
        (LossKind::SoftmaxCrossEntropy, Targets::Labels(labels)) => softmax_cross_entropy(outputs, labels),
        (kind, _) => Err(Error::contract(format!("{kind:?} loss given the wrong kind of targets"))),
    }
}

pub fn mse<T: Scalar>(outputs: &Matrix<T>, targets: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if outputs.shape() != targets.shape() || outputs.rows() == 0 {
        return Err(Error::contract(format!("mse: outputs {:?} vs targets {:?}", outputs.shape(), targets.shape())));
    }
    let inv_batch = T::one() / T::lit(outputs.rows() as f64);
    let diff = outputs.sub(targets)?;
    let value = diff.as_slice().iter().map(|&d| d * d).sum::<T>() * inv_batch;
    let two = T::lit(2.0);
    Ok((value, diff.map(|d| two * d * inv_batch)))
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    let (batch, classes) = logits.shape();
    if batch != labels.len() || batch == 0 {
        return Err(Error::contract(format!("cross-entropy: {batch} rows but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {bad} out of range for {classes} classes")));
    }
    let inv_batch = T::one() / T::lit(batch as f64);
    let mut grad = Matrix::zeros(batch, classes);
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let top = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&z| (z - top).exp()).sum();
        let log_z = top + sum_exp.ln();
        total += log_z - row[label];
        for (j, &z) in row.iter().enumerate() {
            let p = (z - log_z).exp();
            let indicator = if j == label { T::one() } else { T::zero() };
            grad[(i, j)] = (p - indicator) * inv_batch;
        }
    }
    Ok((total * inv_batch, grad))
}
