use super::{divergence_check, take_tensor, LrSchedule, Optimizer};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{check_matching, ParamMap};

#[derive(Debug, Clone, PartialEq)]
pub struct SignSgdConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub weight_decay: T,
    pub warmup_steps: u64,
}

impl<T: Scalar> Default for SignSgdConfig<T> {
    fn default() -> Self {
        Self { learning_rate: T::lit(1e-3), beta1: T::lit(0.9), weight_decay: T::zero(), warmup_steps: 0 }
    }
}

/// Sign descent on momentum: `theta <- theta - lr (sign(m) + wd theta)`.
#[derive(Debug, Clone)]
pub struct SignSgd<T> {
    pub config: SignSgdConfig<T>,
    pub momentum: ParamMap<T>,
    pub step: u64,
}

impl<T: Scalar> SignSgd<T> {
    pub fn new(params: &ParamMap<T>, config: SignSgdConfig<T>) -> Self {
        Self { config, momentum: params.iter().map(|(k, p)| (k.clone(), p.zeros_like())).collect(), step: 0 }
    }
}

impl<T: Scalar> Optimizer<T> for SignSgd<T> {
    fn name(&self) -> &'static str {
        "signsgd"
    }

    fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>) -> Result<()> {
        check_matching(params, grads)?;
        check_matching(&self.momentum, grads)?;
        let n = self.step + 1;
        let c = &self.config;
        let lr = LrSchedule { peak: c.learning_rate, warmup_steps: c.warmup_steps }.at(n);
        for (name, p) in params.iter_mut() {
            let mom = self.momentum.get_mut(name).expect("matched");
            for ((p, &g), m) in p.as_mut_slice().iter_mut().zip(grads[name].as_slice()).zip(mom.as_mut_slice()) {
                *m = c.beta1 * *m + (T::one() - c.beta1) * g;
                *p -= lr * (m.sign0() + c.weight_decay * *p);
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
        self.momentum.iter().map(|(k, t)| (format!("signsgd/{k}/momentum"), t.clone())).collect()
    }

    fn import_state(&mut self, state: &ParamMap<T>, steps: u64) -> Result<()> {
        let mut momentum = self.momentum.clone();
        for (k, t) in momentum.iter_mut() {
            *t = take_tensor(state, &format!("signsgd/{k}/momentum"), t.shape())?.clone();
        }
        self.momentum = momentum;
        self.step = steps;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn map(v: Vec<f64>) -> ParamMap<f64> {
        ParamMap::from([("p".to_string(), Tensor::vector(v))])
    }

    #[test]
    fn no_momentum_moves_against_gradient_sign() {
        let mut params = map(vec![0.0, 0.0]);
        let cfg = SignSgdConfig { learning_rate: 0.1, beta1: 0.0, ..Default::default() };
        let mut opt = SignSgd::new(&params, cfg);
        opt.step(&mut params, &map(vec![-5.0, 3.0])).unwrap();
        assert_eq!(params["p"].as_slice(), &[0.1, -0.1]);
    }

    #[test]
    fn zero_gradient_zero_momentum_is_fixed_point() {
        let mut params = map(vec![1.0, -1.0]);
        let mut opt = SignSgd::new(&params, SignSgdConfig::default());
        opt.step(&mut params, &map(vec![0.0, 0.0])).unwrap();
        assert_eq!(params["p"].as_slice(), &[1.0, -1.0]);
    }
}
