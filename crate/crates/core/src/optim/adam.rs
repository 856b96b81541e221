use super::{divergence_check, take_tensor, LrSchedule, Optimizer};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{check_matching, ParamMap};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Decoupled: subtracted as `lr * weight_decay * theta`.
    pub weight_decay: T,
    pub warmup_steps: u64,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay: T::zero(),
            warmup_steps: 0,
        }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig<T>,
    pub m: ParamMap<T>,
    pub v: ParamMap<T>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamMap<T>, config: AdamConfig<T>) -> Self {
        let zeros = || params.iter().map(|(k, p)| (k.clone(), p.zeros_like())).collect();
        Self { config, m: zeros(), v: zeros(), step: 0 }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
        check_matching(params, grads)?;
        check_matching(&self.m, grads)?;
        let c = &self.config;
        let n = self.step + 1;
        let lr = LrSchedule { peak: c.learning_rate, warmup_steps: c.warmup_steps }.at(n);
        let exp = n.min(i32::MAX as u64) as i32;
        let bc1 = T::one() - c.beta1.powi(exp);
        let bc2 = T::one() - c.beta2.powi(exp);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("matched");
            let v = self.v.get_mut(name).expect("matched");
            for (((p, &g), m), v) in
                p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice())
            {
                *m = c.beta1 * *m + (T::one() - c.beta1) * g;
                *v = c.beta2 * *v + (T::one() - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *p);
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
        for (k, t) in &self.m {
            out.insert(format!("adam/{k}/m"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("adam/{k}/v"), t.clone());
        }
        out
    }

    fn import_state(&mut self, state: &ParamMap<T>, steps: u64) -> Result<()> {
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        for (k, t) in m.iter_mut() {
            *t = take_tensor(state, &format!("adam/{k}/m"), t.shape())?.clone();
        }
        for (k, t) in v.iter_mut() {
            *t = take_tensor(state, &format!("adam/{k}/v"), t.shape())?.clone();
        }
        self.m = m;
        self.v = v;
        self.step = steps;
        Ok(())
    }
}
