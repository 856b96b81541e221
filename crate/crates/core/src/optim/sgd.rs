use super::{divergence_check, take_tensor, LrSchedule, Optimizer};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{check_matching, ParamMap};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig<T> {
    pub learning_rate: T,
    /// Heavy-ball coefficient; zero gives plain SGD.
    pub momentum: T,
    pub weight_decay: T,
    pub warmup_steps: u64,
}

impl<T: Scalar> Default for SgdConfig<T> {
    fn default() -> Self {
        Self { learning_rate: T::lit(0.1), momentum: T::zero(), weight_decay: T::zero(), warmup_steps: 0 }
    }
}

/// `buf <- mu buf + g + wd theta; theta <- theta - lr buf`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig<T>,
    pub buffer: ParamMap<T>,
    pub step: u64,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &ParamMap<T>, config: SgdConfig<T>) -> Self {
        Self { config, buffer: params.iter().map(|(k, p)| (k.clone(), p.zeros_like())).collect(), step: 0 }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
        check_matching(params, grads)?;
        check_matching(&self.buffer, grads)?;
        let n = self.step + 1;
        let c = &self.config;
        let lr = LrSchedule { peak: c.learning_rate, warmup_steps: c.warmup_steps }.at(n);
        for (name, p) in params.iter_mut() {
            let buf = self.buffer.get_mut(name).expect("matched");
            for ((p, &g), b) in p.as_mut_slice().iter_mut().zip(grads[name].as_slice()).zip(buf.as_mut_slice()) {
                *b = c.momentum * *b + g + c.weight_decay * *p;
                *p -= lr * *b;
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
        self.buffer.iter().map(|(k, t)| (format!("sgd/{k}/buffer"), t.clone())).collect()
    }

    fn import_state(&mut self, state: &ParamMap<T>, steps: u64) -> Result<()> {
        let mut buffer = self.buffer.clone();
        for (k, t) in buffer.iter_mut() {
            *t = take_tensor(state, &format!("sgd/{k}/buffer"), t.shape())?.clone();
        }
        self.buffer = buffer;
        self.step = steps;
        Ok(())
    }
}
