//! Shampoo without grafting: `U = L^{-1/2} M R^{-1/2}` with cached inverse roots.

use std::collections::BTreeMap;

use super::{divergence_check, put_matrix, take_matrix, take_tensor, LrSchedule, Optimizer};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigh, sym_power_from, Matrix};
use crate::scalar::Scalar;
use crate::tensor::{check_matching, ParamMap, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ShampooConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub inverse_every: u64,
    /// Eigenvalues are floored at `eps_clamp * lambda_max` before inversion.
    pub eps_clamp: T,
    pub weight_decay: T,
    pub max_dim: usize,
    pub warmup_steps: u64,
}

impl<T: Scalar> Default for ShampooConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            inverse_every: 10,
            eps_clamp: T::lit(1e-12),
            weight_decay: T::zero(),
            max_dim: 10_000,
            warmup_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShampooLayer<T> {
    Standard {
        l: Option<Matrix<T>>,
        r: Option<Matrix<T>>,
        l_inv_sqrt: Option<Matrix<T>>,
        r_inv_sqrt: Option<Matrix<T>>,
        momentum: Matrix<T>,
    },
    /// Non-2-D parameters fall back to sign of momentum, as in SPlus.
    Nonstandard { momentum: Tensor<T> },
}

#[derive(Debug, Clone)]
pub struct Shampoo<T> {
    pub config: ShampooConfig<T>,
    pub layers: BTreeMap<String, ShampooLayer<T>>,
    pub step: u64,
}

/// `F^{-1/2}` with the relative eigenvalue floor. An all-zero factor
/// has no usable inverse; `None` keeps the previous cache.
fn clamped_inv_sqrt<T: Scalar>(f: &Matrix<T>, eps_clamp: T) -> Result<Option<Matrix<T>>> {
    let eig = sym_eigh(f)?;
    let top = eig.lambda_max();
    if top <= T::zero() {
        return Ok(None);
    }
    sym_power_from(&eig, f.frobenius(), T::lit(-0.5), eps_clamp * top).map(Some)
}

impl<T: Scalar> Shampoo<T> {
    pub fn new(params: &ParamMap<T>, config: ShampooConfig<T>) -> Result<Self> {
        if config.inverse_every == 0 {
            return Err(Error::input("inverse_every must be positive"));
        }
        let max_dim = config.max_dim;
        let layers = params
            .iter()
            .map(|(name, p)| {
                let layer = match p.dims2() {
                    Some((m, n)) => ShampooLayer::Standard {
                        l: (m < max_dim).then(|| Matrix::zeros(m, m)),
                        r: (n < max_dim).then(|| Matrix::zeros(n, n)),
                        l_inv_sqrt: (m < max_dim).then(|| Matrix::identity(m)),
                        r_inv_sqrt: (n < max_dim).then(|| Matrix::identity(n)),
                        momentum: Matrix::zeros(m, n),
                    },
                    None => ShampooLayer::Nonstandard { momentum: p.zeros_like() },
                };
                (name.clone(), layer)
            })
            .collect();
        Ok(Self { config, layers, step: 0 })
    }

    /// Recomputes every cached inverse root from the current factors.
    pub fn refresh_inverses(&mut self) -> Result<()> {
        let eps_clamp = self.config.eps_clamp;
        let mut fresh = Vec::new();
        for (name, layer) in &self.layers {
            if let ShampooLayer::Standard { l, r, .. } = layer {
                let inv = |f: &Option<Matrix<T>>, which: &str| -> Result<Option<Matrix<T>>> {
                    match f {
                        Some(f) => clamped_inv_sqrt(f, eps_clamp)
                            .map_err(|e| e.in_context(&format!("layer `{name}` {which} factor"))),
                        None => Ok(None),
                    }
                };
                fresh.push((name.clone(), inv(l, "left")?, inv(r, "right")?));
            }
        }
        for (name, new_l, new_r) in fresh {
            if let Some(ShampooLayer::Standard { l_inv_sqrt, r_inv_sqrt, .. }) = self.layers.get_mut(&name) {
                if let Some(m) = new_l {
                    *l_inv_sqrt = Some(m);
                }
                if let Some(m) = new_r {
                    *r_inv_sqrt = Some(m);
                }
            }
        }
        Ok(())
    }

    /// Preconditioned (unscaled) update for a layer.
    pub fn compute_update(&self, name: &str) -> Result<Tensor<T>> {
        match self.layers.get(name) {
            Some(ShampooLayer::Standard { l_inv_sqrt, r_inv_sqrt, momentum, .. }) => {
                let mut u = match l_inv_sqrt {
                    Some(li) => li.matmul(momentum)?,
                    None => momentum.clone(),
                };
                if let Some(ri) = r_inv_sqrt {
                    u = u.matmul(ri)?;
                }
                Ok(Tensor::from(u))
            }
            Some(ShampooLayer::Nonstandard { momentum }) => Ok(momentum.map(T::sign0)),
            None => Err(Error::contract(format!("unknown parameter `{name}`"))),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Shampoo<T> {
    fn name(&self) -> &'static str {
        "shampoo"
    }

    fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
        check_matching(params, grads)?;
        let n = self.step + 1;
        let c = self.config.clone();
        let (one_b1, one_b2) = (T::one() - c.beta1, T::one() - c.beta2);
        for (name, layer) in self.layers.iter_mut() {
            let g = grads.get(name).ok_or_else(|| Error::contract(format!("missing gradient for `{name}`")))?;
            match layer {
                ShampooLayer::Standard { l, r, momentum, .. } => {
                    let g = g.to_matrix()?;
                    momentum.blend(c.beta1, &g, one_b1)?;
                    if let Some(l) = l.as_mut() {
                        l.gemm_into(one_b2, &g, false, &g, true, c.beta2)?;
                        l.symmetrize();
                    }
                    if let Some(r) = r.as_mut() {
                        r.gemm_into(one_b2, &g, true, &g, false, c.beta2)?;
                        r.symmetrize();
                    }
                }
                ShampooLayer::Nonstandard { momentum } => {
                    for (m, &x) in momentum.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *m = c.beta1 * *m + one_b1 * x;
                    }
                }
            }
        }
        if n.is_multiple_of(c.inverse_every) {
            self.refresh_inverses()?;
        }
        let lr = LrSchedule { peak: c.learning_rate, warmup_steps: c.warmup_steps }.at(n);
        for (name, p) in params.iter_mut() {
            let u = self.compute_update(name)?;
            for (p, &u) in p.as_mut_slice().iter_mut().zip(u.as_slice()) {
                *p -= lr * (u + c.weight_decay * *p);
            }
            divergence_check(p, n, name)?;
        }
        self.step = n;
        Ok(())
    }

    fn steps_taken(&self) -> u64 {
        self.step
    }

    fn current_lr(&self) -> T {
        LrSchedule { peak: self.config.learning_rate, warmup_steps: self.config.warmup_steps }.at(self.step.max(1))
    }

    fn export_state(&self) -> ParamMap<T> {
        let mut out = ParamMap::new();
        for (name, layer) in &self.layers {
            match layer {
                ShampooLayer::Standard { l, r, l_inv_sqrt, r_inv_sqrt, momentum } => {
                    put_matrix(&mut out, format!("shampoo/{name}/momentum"), momentum);
                    for (tag, m) in [("l", l), ("r", r), ("l_inv_sqrt", l_inv_sqrt), ("r_inv_sqrt", r_inv_sqrt)] {
                        if let Some(m) = m {
                            put_matrix(&mut out, format!("shampoo/{name}/{tag}"), m);
                        }
                    }
                }
                ShampooLayer::Nonstandard { momentum } => {
                    out.insert(format!("shampoo/{name}/momentum"), momentum.clone());
                }
            }
        }
        out
    }

    fn import_state(&mut self, state: &ParamMap<T>, steps: u64) -> Result<()> {
        let mut layers = self.layers.clone();
        for (name, layer) in layers.iter_mut() {
            match layer {
                ShampooLayer::Standard { l, r, l_inv_sqrt, r_inv_sqrt, momentum } => {
                    *momentum = take_matrix(state, &format!("shampoo/{name}/momentum"), momentum.shape())?;
                    for (tag, m) in [("l", l), ("r", r), ("l_inv_sqrt", l_inv_sqrt), ("r_inv_sqrt", r_inv_sqrt)] {
                        if let Some(m) = m {
                            *m = take_matrix(state, &format!("shampoo/{name}/{tag}"), m.shape())?;
                        }
                    }
                }
                ShampooLayer::Nonstandard { momentum } => {
                    *momentum = take_tensor(state, &format!("shampoo/{name}/momentum"), momentum.shape())?.clone();
                }
            }
        }
        self.layers = layers;
        self.step = steps;
        Ok(())
    }
}
