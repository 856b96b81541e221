//! SPlus: Shampoo-style whitening with a historical eigenbasis, instant-sign
//! normalization, symmetric shape-aware scaling and iterate averaging.
//!
//! For a dense layer with gradient `G` (`m x n`) one update is
//!
//! ```text
//! M  <- b1 M + (1 - b1) G                      momentum
//! L  <- b2 L + (1 - b2) G G^T                  left factor,  m x m
//! R  <- b2 R + (1 - b2) G^T G                  right factor, n x n
//! every N steps: Q_L = eigvecs(L + eps I), Q_R = eigvecs(R + eps I)
//! U  = Q_L sign(Q_L^T M Q_R) Q_R^T             instant-sign update
//! theta' <- theta' - lr * (2 / (m + n)) * (U + wd * theta')
//! theta  <- bias-corrected EMA of theta' with rate ema_rate
//! ```
//!
//! The eigenvalues are discarded: only the basis is historical, the
//! normalization is the instantaneous sign. Because the inner matrix has
//! entries in `{-1, 0, 1}` and the bases are orthonormal, `||U||_F <= sqrt(mn)`
//! no matter how stale the cached basis is.
//!
//! Parameters that are not 2-D (biases, scales) are "nonstandard": they take
//! `sign(M)` scaled by `nonstandard_constant`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{divergence_check, put_matrix, take_matrix, take_tensor, LrSchedule, Optimizer};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigh, Matrix};
use crate::scalar::Scalar;
use crate::tensor::{check_matching, ParamMap, Tensor};

/// Recommended learning rate when no tuned Adam reference exists.
pub const DEFAULT_SPLUS_LR: f64 = 0.2;

/// Converts a tuned Adam learning rate into an SPlus one: `adam_lr * width * 2`.
pub fn lr_convert(adam_lr: f64, network_width: usize) -> f64 {
    adam_lr * network_width as f64 * 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMode {
    /// `2 / (m + n)`.
    Symmetric,
    /// `1 / m`, or `1 / n` with [`SPlusConfig::spectral_fan_in`].
    Spectral,
    None,
}

impl std::str::FromStr for ScalingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "spectral" => Ok(Self::Spectral),
            "none" => Ok(Self::None),
            other => Err(Error::input(format!("unknown scaling mode `{other}` (symmetric|spectral|none)"))),
        }
    }
}

impl std::fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Symmetric => "symmetric",
            Self::Spectral => "spectral",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SPlusConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub ema_rate: T,
    pub eps: T,
    pub inverse_every: u64,
    pub nonstandard_constant: T,
    pub weight_decay: T,
    pub max_dim: usize,
    pub scaling_mode: ScalingMode,
    pub warmup_steps: u64,
    /// Use `1 / (2 (m + n))` instead of `2 / (m + n)` for A/B comparisons.
    pub pseudocode_scale: bool,
    /// Spectral mode divides by the input dimension `n` instead of `m`.
    pub spectral_fan_in: bool,
}

impl<T: Scalar> Default for SPlusConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(DEFAULT_SPLUS_LR),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            ema_rate: T::lit(0.999),
            eps: T::lit(1e-30),
            inverse_every: 100,
            nonstandard_constant: T::lit(0.001),
            weight_decay: T::lit(1e-2),
            max_dim: 10_000,
            scaling_mode: ScalingMode::Symmetric,
            warmup_steps: 200,
            pseudocode_scale: false,
            spectral_fan_in: false,
        }
    }
}

impl<T: Scalar> SPlusConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: T| x >= T::zero() && x < T::one();
        if !(self.learning_rate >= T::zero() && self.learning_rate.is_finite()) {
            return Err(Error::input(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !unit(self.beta1) || !unit(self.beta2) || !unit(self.ema_rate) {
            return Err(Error::input("beta1, beta2 and ema_rate must lie in [0, 1)"));
        }
        if self.eps < T::zero() || self.weight_decay < T::zero() || self.nonstandard_constant <= T::zero() {
            return Err(Error::input("eps and weight_decay must be >= 0, nonstandard_constant > 0"));
        }
        if self.inverse_every == 0 || self.max_dim == 0 {
            return Err(Error::input("inverse_every and max_dim must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule<T> {
        LrSchedule { peak: self.learning_rate, warmup_steps: self.warmup_steps }
    }
}

/// Memory for one dense (2-D) layer. A side is `None` when that dimension is
/// at least `max_dim`; the layer is then rotated on the other side only.
#[derive(Debug, Clone, PartialEq)]
pub struct SPlusLayerState<T> {
    pub l: Option<Matrix<T>>,
    pub r: Option<Matrix<T>>,
    pub q_l: Option<Matrix<T>>,
    pub q_r: Option<Matrix<T>>,
    pub momentum: Matrix<T>,
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerState<T> {
    Standard(SPlusLayerState<T>),
    /// Not a 2-D parameter: momentum only.
    Nonstandard {
        momentum: Tensor<T>,
    },
}

/// Full optimizer state. Also the [`Optimizer`] implementation for SPlus.
#[derive(Debug, Clone)]
pub struct SPlusState<T> {
    pub layers: BTreeMap<String, LayerState<T>>,
    /// Bias-corrected exponential moving average of the live parameters.
    pub slow_params: ParamMap<T>,
    pub step: u64,
    pub config: SPlusConfig<T>,
}

fn side<T: Scalar>(d: usize, max_dim: usize, f: impl FnOnce(usize) -> Matrix<T>) -> Option<Matrix<T>> {
    (d < max_dim).then(|| f(d))
}

/// A layer's newly computed `(Q_L, Q_R)`; `None` for an absent side.
type FreshBases<T> = (String, Option<Matrix<T>>, Option<Matrix<T>>);

impl<T: Scalar> SPlusState<T> {
    /// Zero momentum and factors, identity eigenbases, zero slow parameters.
    pub fn init(params: &ParamMap<T>, config: SPlusConfig<T>) -> Result<Self> {
        config.validate()?;
        let max_dim = config.max_dim;
        let layers = params
            .iter()
            .map(|(name, p)| {
                let state = match p.dims2() {
                    Some((m, n)) => LayerState::Standard(SPlusLayerState {
                        l: side(m, max_dim, |d| Matrix::zeros(d, d)),
                        r: side(n, max_dim, |d| Matrix::zeros(d, d)),
                        q_l: side(m, max_dim, Matrix::identity),
                        q_r: side(n, max_dim, Matrix::identity),
                        momentum: Matrix::zeros(m, n),
                        shape: (m, n),
                    }),
                    None => LayerState::Nonstandard { momentum: p.zeros_like() },
                };
                (name.clone(), state)
            })
            .collect();
        let slow_params = params.iter().map(|(k, p)| (k.clone(), p.zeros_like())).collect();
        Ok(Self { layers, slow_params, step: 0, config })
    }

    pub fn layer(&self, name: &str) -> Result<&LayerState<T>> {
        self.layers.get(name).ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    /// Folds one gradient into momentum and the factor matrices.
    pub fn accumulate(&mut self, grads: &ParamMap<T>) -> Result<()> {
        for name in grads.keys() {
            if !self.layers.contains_key(name) {
                return Err(Error::contract(format!("gradient for unknown parameter `{name}`")));
            }
        }
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        self.layers.par_iter_mut().try_for_each(|(name, layer)| -> Result<()> {
            let g = grads.get(name).ok_or_else(|| Error::contract(format!("missing gradient for `{name}`")))?;
            match layer {
                LayerState::Standard(st) => {
                    if g.dims2() != Some(st.shape) {
                        return Err(Error::contract(format!(
                            "gradient for `{name}` has shape {:?}, layer is {:?}",
                            g.shape(),
                            st.shape
                        )));
                    }
                    let g = g.to_matrix()?;
                    st.momentum.blend(b1, &g, one_b1)?;
                    if let Some(l) = st.l.as_mut() {
                        l.gemm_into(one_b2, &g, false, &g, true, b2)?;
                        l.symmetrize();
                    }
                    if let Some(r) = st.r.as_mut() {
                        r.gemm_into(one_b2, &g, true, &g, false, b2)?;
                        r.symmetrize();
                    }
                }
                LayerState::Nonstandard { momentum } => {
                    if g.shape() != momentum.shape() {
                        return Err(Error::contract(format!(
                            "gradient for `{name}` has shape {:?}, parameter is {:?}",
                            g.shape(),
                            momentum.shape()
                        )));
                    }
                    for (m, &x) in momentum.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *m = b1 * *m + one_b1 * x;
                    }
                }
            }
            Ok(())
        })
    }

    /// Replaces every cached eigenbasis with the eigenvectors of `L + eps I`
    /// and `R + eps I`. On failure no layer is modified.
    pub fn refresh_eigenbasis(&mut self) -> Result<()> {
        let eps = self.config.eps;
        let basis = |f: &Option<Matrix<T>>, which: &str, name: &str| -> Result<Option<Matrix<T>>> {
            f.as_ref()
                .map(|f| {
                    let mut reg = f.clone();
                    reg.add_diagonal(eps);
                    sym_eigh(&reg).map(|e| e.q).map_err(|e| e.in_context(&format!("layer `{name}` {which} factor")))
                })
                .transpose()
        };
        let fresh: Vec<FreshBases<T>> = self
            .layers
            .par_iter()
            .filter_map(|(name, layer)| match layer {
                LayerState::Standard(st) => Some((name, st)),
                LayerState::Nonstandard { .. } => None,
            })
            .map(|(name, st)| Ok((name.clone(), basis(&st.l, "left", name)?, basis(&st.r, "right", name)?)))
            .collect::<Result<_>>()?;
        for (name, q_l, q_r) in fresh {
            if let Some(LayerState::Standard(st)) = self.layers.get_mut(&name) {
                st.q_l = q_l;
                st.q_r = q_r;
            }
        }
        Ok(())
    }

    /// Raw instant-sign update `Q_L sign(Q_L^T M Q_R) Q_R^T` for a dense layer.
    pub fn compute_update(&self, name: &str) -> Result<Matrix<T>> {
        match self.layer(name)? {
            LayerState::Standard(st) => Ok(instant_sign(&st.momentum, st.q_l.as_ref(), st.q_r.as_ref())),
            LayerState::Nonstandard { .. } => {
                Err(Error::contract(format!("`{name}` is not a 2-D parameter; use nonstandard_update")))
            }
        }
    }

    /// Elementwise `sign(M)` for a nonstandard parameter.
    pub fn nonstandard_update(&self, name: &str) -> Result<Tensor<T>> {
        match self.layer(name)? {
            LayerState::Nonstandard { momentum } => Ok(momentum.map(T::sign0)),
            LayerState::Standard(_) => Err(Error::contract(format!("`{name}` is a 2-D parameter; use compute_update"))),
        }
    }

    /// Raw (unscaled) update for any parameter.
    fn raw_update(&self, name: &str) -> Result<Tensor<T>> {
        match self.layer(name)? {
            LayerState::Standard(_) => self.compute_update(name).map(Tensor::from),
            LayerState::Nonstandard { .. } => self.nonstandard_update(name),
        }
    }

    /// One full SPlus step on the live parameters.
    pub fn apply_step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
        check_matching(params, grads)?;
        if params.len() != self.layers.len() || params.keys().any(|k| !self.layers.contains_key(k)) {
            return Err(Error::contract("parameter set differs from the one the optimizer was built for"));
        }
        let n = self.step + 1;
        self.accumulate(grads)?;
        if n.is_multiple_of(self.config.inverse_every) {
            self.refresh_eigenbasis()?;
        }
        let lr = self.config.schedule().at(n);
        let wd = self.config.weight_decay;

        let updates: Vec<(String, Tensor<T>)> =
            params.par_iter().map(|(name, _)| Ok((name.clone(), self.raw_update(name)?))).collect::<Result<_>>()?;
        for (name, update) in updates {
            let live = params.get_mut(&name).expect("checked above");
            let factor = lr * shape_factor(live.shape(), &self.config);
            for (p, &u) in live.as_mut_slice().iter_mut().zip(update.as_slice()) {
                *p -= factor * (u + wd * *p);
            }
            divergence_check(live, n, &name)?;
        }

        // theta_hat_n = theta_hat_{n-1} + (1 - b3) / (1 - b3^n) (theta'_n - theta_hat_{n-1}),
        // which equals the zero-initialized EMA divided by (1 - b3^n).
        let b3 = self.config.ema_rate;
        let weight = (T::one() - b3) / (T::one() - b3.powi(n.min(i32::MAX as u64) as i32));
        for (name, live) in params.iter() {
            let slow = self.slow_params.get_mut(name).expect("same keys as params");
            for (s, &p) in slow.as_mut_slice().iter_mut().zip(live.as_slice()) {
                *s += weight * (p - *s);
            }
        }
        self.step = n;
        Ok(())
    }

    /// Bias-corrected slow parameters, the ones to evaluate at.
    pub fn get_eval_params(&self) -> Result<ParamMap<T>> {
        if self.step == 0 {
            return Err(Error::contract("get_eval_params needs at least one step (bias correction divides by zero)"));
        }
        Ok(self.slow_params.clone())
    }

    /// Floats stored for parameter `name`, counting the live parameter,
    /// the slow copy, momentum, both factors and both eigenbases.
    pub fn stored_floats(&self, name: &str) -> Result<usize> {
        let slow = self.slow_params.get(name).map_or(0, Tensor::numel);
        Ok(match self.layer(name)? {
            LayerState::Standard(st) => {
                let sq = |m: &Option<Matrix<T>>| m.as_ref().map_or(0, |m| m.rows() * m.cols());
                let mn = st.shape.0 * st.shape.1;
                mn + slow + mn + sq(&st.l) + sq(&st.r) + sq(&st.q_l) + sq(&st.q_r)
            }
            LayerState::Nonstandard { momentum } => 2 * momentum.numel() + slow,
        })
    }
}

/// Rotates into the cached basis, takes the sign, rotates back. Absent sides
/// act as the identity.
pub fn instant_sign<T: Scalar>(momentum: &Matrix<T>, q_l: Option<&Matrix<T>>, q_r: Option<&Matrix<T>>) -> Matrix<T> {
    let mut rot = match q_l {
        Some(q) => q.t_matmul(momentum).expect("left basis matches momentum rows"),
        None => momentum.clone(),
    };
    if let Some(q) = q_r {
        rot = rot.matmul(q).expect("right basis matches momentum cols");
    }
    rot.map_inplace(T::sign0);
    if let Some(q) = q_l {
        rot = q.matmul(&rot).expect("left basis matches");
    }
    if let Some(q) = q_r {
        rot = rot.matmul_t(q).expect("right basis matches");
    }
    rot
}

/// Per-parameter multiplier applied on top of the learning rate.
pub fn shape_factor<T: Scalar>(shape: &[usize], config: &SPlusConfig<T>) -> T {
    match shape {
        [m, n] => match config.scaling_mode {
            ScalingMode::Symmetric if config.pseudocode_scale => T::one() / T::lit((2 * (m + n)) as f64),
            ScalingMode::Symmetric => T::lit(2.0) / T::lit((m + n) as f64),
            ScalingMode::Spectral => T::one() / T::lit(if config.spectral_fan_in { *n } else { *m } as f64),
            ScalingMode::None => T::one(),
        },
        _ => config.nonstandard_constant,
    }
}

/// Multiplies an update by its [`shape_factor`].
pub fn shape_scale<T: Scalar>(update: &Tensor<T>, config: &SPlusConfig<T>) -> Tensor<T> {
    let f = shape_factor(update.shape(), config);
    update.map(|x| x * f)
}

impl<T: Scalar> Optimizer<T> for SPlusState<T> {
    fn name(&self) -> &'static str {
        "splus"
    }

    fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
        self.apply_step(params, grads)
    }

    fn steps_taken(&self) -> u64 {
        self.step
    }

    fn current_lr(&self) -> T {
        self.config.schedule().at(self.step.max(1))
    }

    fn eval_params(&self, live: &ParamMap<T>) -> Result<ParamMap<T>> {
        if self.step == 0 {
            Ok(live.clone())
        } else {
            self.get_eval_params()
        }
    }

    fn averages_iterates(&self) -> bool {
        true
    }

    fn export_state(&self) -> ParamMap<T> {
        let mut out = ParamMap::new();
        for (name, layer) in &self.layers {
            match layer {
                LayerState::Standard(st) => {
                    put_matrix(&mut out, format!("splus/{name}/momentum"), &st.momentum);
                    for (tag, m) in [("l", &st.l), ("r", &st.r), ("q_l", &st.q_l), ("q_r", &st.q_r)] {
                        if let Some(m) = m {
                            put_matrix(&mut out, format!("splus/{name}/{tag}"), m);
                        }
                    }
                }
                LayerState::Nonstandard { momentum } => {
                    out.insert(format!("splus/{name}/momentum"), momentum.clone());
                }
            }
        }
        for (name, slow) in &self.slow_params {
            out.insert(format!("splus/{name}/slow"), slow.clone());
        }
        out
    }

    fn import_state(&mut self, state: &ParamMap<T>, steps: u64) -> Result<()> {
        let mut restored = self.clone();
        for (name, layer) in restored.layers.iter_mut() {
            match layer {
                LayerState::Standard(st) => {
                    st.momentum = take_matrix(state, &format!("splus/{name}/momentum"), st.shape)?;
                    for (tag, m) in [("l", &mut st.l), ("r", &mut st.r), ("q_l", &mut st.q_l), ("q_r", &mut st.q_r)] {
                        if let Some(m) = m {
                            *m = take_matrix(state, &format!("splus/{name}/{tag}"), m.shape())?;
                        }
                    }
                }
                LayerState::Nonstandard { momentum } => {
                    *momentum = take_tensor(state, &format!("splus/{name}/momentum"), momentum.shape())?.clone();
                }
            }
        }
        for (name, slow) in restored.slow_params.iter_mut() {
            *slow = take_tensor(state, &format!("splus/{name}/slow"), slow.shape())?.clone();
        }
        restored.step = steps;
        *self = restored;
        Ok(())
    }
}
