//! Dense feed-forward networks with hand-written backpropagation.
//!
//! A layer maps a batch `X` (`batch x fan_in`, one sample per row) to
//! `act(X W^T + b)` where `W` is `fan_out x fan_in`. Weight gradients are
//! therefore `delta^T X`, matching the `(m, n) = (fan_out, fan_in)` layout
//! the optimizers see.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::CounterRng;
use crate::scalar::Scalar;
use crate::tensor::{ParamMap, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Self::Linear => z,
            Self::Relu => z.max(T::zero()),
            Self::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Self::Linear => T::one(),
            Self::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Tanh => T::one() - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::input(format!("unknown activation `{other}` (linear|relu|tanh)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub bias: bool,
}

impl LayerSpec {
    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Architecture plus live parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    pub layers: Vec<LayerSpec>,
    pub params: ParamMap<T>,
    pub width: usize,
}

/// Values recorded by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationTape<T> {
    /// Input of every layer; `inputs[0]` is the network input.
    pub inputs: Vec<Matrix<T>>,
    pub pre_activations: Vec<Matrix<T>>,
    /// Output of every layer (post-nonlinearity); the last one is the network output.
    pub outputs: Vec<Matrix<T>>,
}

impl<T: Scalar> DenseNet<T> {
    /// Multi-layer perceptron with `hidden` widths, `activation` on hidden
    /// layers and a linear head. Weights are `N(0, 1 / fan_in)`, biases zero.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        bias: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::contract("layer dimensions must be positive"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                name: format!("layer{i}"),
                fan_in: w[0],
                fan_out: w[1],
                activation: if i + 2 == dims.len() { Activation::Linear } else { activation },
                bias,
            })
            .collect();
        let mut params = ParamMap::new();
        for l in &layers {
            let std = (1.0 / l.fan_in as f64).sqrt();
            let w = Matrix::from_fn(l.fan_out, l.fan_in, |_, _| T::lit(rng.normal() * std));
            params.insert(l.weight_key(), Tensor::from(w));
            if l.bias {
                params.insert(l.bias_key(), Tensor::zeros(&[l.fan_out]));
            }
        }
        let width = hidden.iter().copied().max().unwrap_or(input_dim);
        Ok(Self { layers, params, width })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out
    }

    /// Checks that `params` holds exactly this architecture's tensors.
    pub fn check_params(&self, params: &ParamMap<T>) -> Result<()> {
        let mut expected = 0;
        for l in &self.layers {
            let w =
                params.get(&l.weight_key()).ok_or_else(|| Error::contract(format!("missing `{}`", l.weight_key())))?;
            if w.dims2() != Some((l.fan_out, l.fan_in)) {
                return Err(Error::contract(format!("`{}` has shape {:?}", l.weight_key(), w.shape())));
            }
            expected += 1;
            if l.bias {
                let b =
                    params.get(&l.bias_key()).ok_or_else(|| Error::contract(format!("missing `{}`", l.bias_key())))?;
                if b.shape() != [l.fan_out] {
                    return Err(Error::contract(format!("`{}` has shape {:?}", l.bias_key(), b.shape())));
                }
                expected += 1;
            }
        }
        if params.len() != expected {
            return Err(Error::contract("parameter map has entries this architecture does not use"));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Matrix<T>) -> Result<(Matrix<T>, ActivationTape<T>)> {
        self.forward_with(&self.params, inputs)
    }

    /// Forward pass with an explicit parameter set (live or averaged).
    pub fn forward_with(&self, params: &ParamMap<T>, inputs: &Matrix<T>) -> Result<(Matrix<T>, ActivationTape<T>)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has {} features, network expects {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let mut tape = ActivationTape { inputs: Vec::new(), pre_activations: Vec::new(), outputs: Vec::new() };
        let mut x = inputs.clone();
        for l in &self.layers {
            let w = params
                .get(&l.weight_key())
                .ok_or_else(|| Error::contract(format!("missing `{}`", l.weight_key())))?
                .to_matrix()?;
            let mut z = x.matmul_t(&w)?;
            if l.bias {
                let b =
                    params.get(&l.bias_key()).ok_or_else(|| Error::contract(format!("missing `{}`", l.bias_key())))?;
                let cols = z.cols();
                for (i, v) in z.as_mut_slice().iter_mut().enumerate() {
                    *v += b.as_slice()[i % cols];
                }
            }
            let a = z.map(|v| l.activation.apply(v));
            tape.inputs.push(x);
            tape.pre_activations.push(z);
            tape.outputs.push(a.clone());
            x = a;
        }
        Ok((x, tape))
    }

    /// Gradients of the loss whose derivative w.r.t. the outputs is `loss_grad`.
    pub fn backward(&self, tape: &ActivationTape<T>, loss_grad: &Matrix<T>) -> Result<ParamMap<T>> {
        self.backward_with(&self.params, tape, loss_grad)
    }

    pub fn backward_with(
        &self,
        params: &ParamMap<T>,
        tape: &ActivationTape<T>,
        loss_grad: &Matrix<T>,
    ) -> Result<ParamMap<T>> {
        if tape.outputs.len() != self.layers.len() {
            return Err(Error::contract("activation tape does not match the architecture"));
        }
        let last = tape.outputs.last().expect("non-empty");
        if loss_grad.shape() != last.shape() {
            return Err(Error::contract(format!(
                "loss gradient shape {:?} does not match output {:?}",
                loss_grad.shape(),
                last.shape()
            )));
        }
        let mut grads = ParamMap::new();
        let mut upstream = loss_grad.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let z = &tape.pre_activations[i];
            let a = &tape.outputs[i];
            let mut delta = upstream;
            for ((d, &zv), &av) in delta.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                *d *= l.activation.derivative(zv, av);
            }
            let gw = delta.t_matmul(&tape.inputs[i])?;
            grads.insert(l.weight_key(), Tensor::from(gw));
            if l.bias {
                let mut gb = vec![T::zero(); l.fan_out];
                for r in 0..delta.rows() {
                    for (acc, &v) in gb.iter_mut().zip(delta.row(r)) {
                        *acc += v;
                    }
                }
                grads.insert(l.bias_key(), Tensor::vector(gb));
            }
            if i > 0 {
                let w = params[&l.weight_key()].to_matrix()?;
                upstream = delta.matmul(&w)?;
            } else {
                upstream = delta;
            }
        }
        Ok(grads)
    }
}
