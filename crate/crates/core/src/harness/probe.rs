//! Measurements on trained networks and on the whitening metric itself.

use super::net::DenseNet;
use crate::error::{Error, Result};
use crate::linalg::{sym_power, Matrix};
use crate::rng::CounterRng;
use crate::scalar::Scalar;

/// Per hidden layer, the RMS (over probe samples and units) of the change in
/// post-nonlinearity activations between two parameter settings of the same
/// architecture.
pub fn measure_activation_shift<T: Scalar>(
    before: &DenseNet<T>,
    after: &DenseNet<T>,
    probe: &Matrix<T>,
) -> Result<Vec<T>> {
    if before.layers != after.layers {
        return Err(Error::contract("activation shift needs identical architectures"));
    }
    let (_, tape_a) = before.forward(probe)?;
    let (_, tape_b) = after.forward(probe)?;
    let hidden = before.layers.len() - 1;
    Ok(tape_a.outputs[..hidden]
        .iter()
        .zip(&tape_b.outputs[..hidden])
        .map(|(a, b)| {
            let n = T::lit(a.as_slice().len() as f64);
            let ss: T = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x - y) * (x - y)).sum();
            (ss / n).sqrt()
        })
        .collect())
}

pub const WHITENING_MAX_DIM: usize = 16;

/// Lower-triangular `L` with `L L^T = a`, for SPD `a`.
pub fn cholesky(a: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = a.rows();
    if !a.is_square() {
        return Err(Error::contract("cholesky needs a square matrix"));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if !(d > 0.0) {
            return Err(Error::numerical("cholesky", format!("pivot {j} is {d}; matrix is not positive definite")));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Draws `samples` gradients `g ~ N(0, C)` (through a Cholesky factor, not
/// the symmetric root), whitens them with `W^{-1} = C^{-1/2}`, and returns
/// `||E[w w^T] - I||_F` for the empirical uncentered covariance.
pub fn whitening_probe(c: &Matrix<f64>, samples: usize, rng: &mut CounterRng) -> Result<f64> {
    let d = c.rows();
    if d == 0 || d > WHITENING_MAX_DIM {
        return Err(Error::contract(format!("whitening probe supports 1..={WHITENING_MAX_DIM} dimensions, got {d}")));
    }
    if samples == 0 {
        return Err(Error::contract("whitening probe needs at least one sample"));
    }
    let chol = cholesky(c)?;
    let w_inv = sym_power(c, -0.5, 0.0)?;
    let z = Matrix::from_fn(samples, d, |_, _| rng.normal());
    // Rows of Z L^T are draws with covariance C; rows of G W^{-1} are whitened.
    let g = z.matmul_t(&chol)?;
    let white = g.matmul(&w_inv)?;
    let mut cov = white.t_matmul(&white)?.scale(1.0 / samples as f64);
    cov.add_diagonal(-1.0);
    Ok(cov.frobenius())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::net::Activation;
    use crate::tensor::Tensor;

    #[test]
    fn cholesky_reconstructs() {
        let a = Matrix::from_rows(&[&[4.0, 2.0, 0.4], &[2.0, 5.0, 1.0], &[0.4, 1.0, 3.0]]);
        let l = cholesky(&a).unwrap();
        assert!(l.matmul_t(&l).unwrap().sub(&a).unwrap().max_abs() < 1e-14);
        assert!(cholesky(&Matrix::diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn identical_nets_have_zero_shift() {
        let mut rng = CounterRng::new(0, "t");
        let net = DenseNet::<f64>::mlp(3, &[4, 4], 2, Activation::Tanh, true, &mut rng).unwrap();
        let probe = Matrix::from_fn(5, 3, |i, j| (i + j) as f64 * 0.1);
        assert_eq!(measure_activation_shift(&net, &net, &probe).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn head_change_leaves_hidden_layers() {
        let mut rng = CounterRng::new(0, "t");
        let net = DenseNet::<f64>::mlp(3, &[4], 2, Activation::Relu, true, &mut rng).unwrap();
        let mut other = net.clone();
        let key = net.layers[1].weight_key();
        other.params.insert(key.clone(), net.params[&key].map(|w| w + 1.0));
        let probe = Matrix::from_fn(5, 3, |i, j| (i as f64) - (j as f64));
        assert_eq!(measure_activation_shift(&net, &other, &probe).unwrap(), vec![0.0]);
    }

    #[test]
    fn rank_one_change_matches_closed_form() {
        let mut rng = CounterRng::new(4, "t");
        let k = 6;
        let net = DenseNet::<f64>::mlp(4, &[k], 2, Activation::Linear, false, &mut rng).unwrap();
        let u: Vec<f64> = (0..k).map(|i| 0.3 * i as f64 - 0.7).collect();
        let v = [0.5, -1.0, 2.0, 0.25];
        let key = net.layers[0].weight_key();
        let w = net.params[&key].to_matrix().unwrap();
        let dw = Matrix::from_fn(k, 4, |i, j| u[i] * v[j]);
        let mut other = net.clone();
        other.params.insert(key, Tensor::from(w.add(&dw).unwrap()));
        let x = [1.0, 2.0, -1.0, 0.5];
        let probe = Matrix::from_fn(1, 4, |_, j| x[j]);
        let vx: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
        let norm_u: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let want = norm_u * vx.abs() / (k as f64).sqrt();
        let got = measure_activation_shift(&net, &other, &probe).unwrap()[0];
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn whitening_rejects_large_dims() {
        let mut rng = CounterRng::new(0, "t");
        assert!(whitening_probe(&Matrix::identity(17), 10, &mut rng).is_err());
    }
}
