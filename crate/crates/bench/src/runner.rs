//! The training loop: one run from a [`RunConfig`] to a [`RunRecord`].

use std::path::Path;

use splus_core::harness::{make_task, Objective};
use splus_core::{Error, Optimizer, ParamMap, Result, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::record::{EvalPoint, RunRecord, Status};
use crate::timer::process_cpu_ms;

/// Validation loss above this multiple of the initial one counts as a blow-up.
pub const BLOWUP_FACTOR: f64 = 10.0;
/// Consecutive blown-up evaluations that mark a run as diverged.
pub const BLOWUP_EVALS: u32 = 3;

const PARAM_PREFIX: &str = "param/";
const OPT_PREFIX: &str = "opt/";
const RUN_PREFIX: &str = "run/";

pub struct Trainer {
    pub config: RunConfig,
    pub task: Box<dyn Objective<f64>>,
    pub params: ParamMap<f64>,
    pub optimizer: Box<dyn Optimizer<f64>>,
    pub step: u64,
    pub record: RunRecord,
    initial_val: f64,
    blowups: u32,
    cpu_ms: f64,
    train_sum: f64,
    train_count: u64,
}

impl Trainer {
    /// Builds the task and optimizer and evaluates step 0.
    pub fn new(config: &RunConfig, run_id: &str) -> Result<Self> {
        let task = make_task::<f64>(&config.task)?;
        let params = task.init_params();
        Self::assemble(config, run_id, task, params)
    }

    /// Like [`Trainer::new`] but starting from the given parameters (for
    /// example loaded from a base checkpoint) with fresh optimizer state.
    pub fn from_params(config: &RunConfig, run_id: &str, params: ParamMap<f64>) -> Result<Self> {
        let task = make_task::<f64>(&config.task)?;
        check_same_layout(&task.init_params(), &params)?;
        Self::assemble(config, run_id, task, params)
    }

    fn assemble(
        config: &RunConfig,
        run_id: &str,
        task: Box<dyn Objective<f64>>,
        params: ParamMap<f64>,
    ) -> Result<Self> {
        let optimizer = config.optimizer.build(&params)?;
        let record = RunRecord {
            run_id: run_id.to_string(),
            optimizer: config.optimizer.name().to_string(),
            config: config.describe(),
            task: config.task.descriptor(),
            seed: config.task.seed,
            total_steps: config.total_steps,
            averaged: optimizer.averages_iterates(),
            status: Status::Completed,
            series: Vec::new(),
        };
        let mut t = Self {
            config: config.clone(),
            task,
            params,
            optimizer,
            step: 0,
            record,
            initial_val: f64::NAN,
            blowups: 0,
            cpu_ms: 0.0,
            train_sum: 0.0,
            train_count: 0,
        };
        let (first_loss, _) = t.task.loss_grad(&t.params, &t.task.sample(0))?;
        t.train_sum = first_loss;
        t.train_count = 1;
        let status = t.evaluate()?;
        t.initial_val = t.record.series[0].val_loss_live;
        if let Some(status) = status {
            t.record.status = status;
        }
        Ok(t)
    }

    pub fn is_finished(&self) -> bool {
        self.record.status != Status::Completed || self.step >= self.config.total_steps
    }

    /// Appends an evaluation at the current step. Returns a divergence
    /// status if the evaluation trips the divergence rule.
    fn evaluate(&mut self) -> Result<Option<Status>> {
        let live = self.task.val_loss(&self.params)?;
        let eval = if self.optimizer.averages_iterates() && self.step > 0 {
            self.task.val_loss(&self.optimizer.eval_params(&self.params)?)?
        } else {
            live
        };
        let train = if self.train_count > 0 { self.train_sum / self.train_count as f64 } else { f64::NAN };
        self.train_sum = 0.0;
        self.train_count = 0;
        self.record.series.push(EvalPoint {
            step: self.step,
            train_loss: train,
            val_loss_live: live,
            val_loss_eval: eval,
            effective_lr: self.optimizer.current_lr(),
            wallclock_ms: self.cpu_ms,
        });
        if !live.is_finite() || !eval.is_finite() {
            return Ok(Some(Status::Diverged { step: self.step }));
        }
        if self.step > 0 && live > BLOWUP_FACTOR * self.initial_val {
            self.blowups += 1;
            if self.blowups >= BLOWUP_EVALS {
                return Ok(Some(Status::Diverged { step: self.step }));
            }
        } else {
            self.blowups = 0;
        }
        Ok(None)
    }

    /// One optimizer update, plus an evaluation when one is due.
    pub fn advance(&mut self) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        let n = self.step + 1;
        let batch = self.task.sample(self.step);
        let start = process_cpu_ms();
        let (loss, grads) = self.task.loss_grad(&self.params, &batch)?;
        let diverged = if !loss.is_finite() || !grads.values().all(finite_energy) {
            true
        } else {
            match self.optimizer.step(&mut self.params, &grads) {
                Ok(()) => false,
                Err(Error::Divergence { .. }) => true,
                Err(e) => return Err(e),
            }
        };
        self.cpu_ms += process_cpu_ms() - start;
        self.step = n;
        if diverged {
            self.record.status = Status::Diverged { step: n };
            return Ok(());
        }
        self.train_sum += loss;
        self.train_count += 1;
        if n.is_multiple_of(self.config.eval_every) || n == self.config.total_steps {
            if let Some(status) = self.evaluate()? {
                self.record.status = status;
            }
        }
        Ok(())
    }

    /// Trains until `total_steps` or divergence. With `checkpoint_dir`,
    /// saves `step_<n>.ckpt` every `checkpoint_every` steps.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<Status> {
        while !self.is_finished() {
            self.advance()?;
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step.is_multiple_of(every) && self.record.status == Status::Completed {
                    self.checkpoint().save(&dir.join(format!("step_{}.ckpt", self.step)))?;
                }
            }
        }
        Ok(self.record.status)
    }

    pub fn into_record(self) -> RunRecord {
        self.record
    }

    /// Everything needed to continue this run bit-for-bit.
    pub fn checkpoint(&self) -> Checkpoint<f64> {
        let mut tensors = ParamMap::new();
        for (k, v) in &self.params {
            tensors.insert(format!("{PARAM_PREFIX}{k}"), v.clone());
        }
        for (k, v) in self.optimizer.export_state() {
            tensors.insert(format!("{OPT_PREFIX}{k}"), v);
        }
        let scalars = [
            ("initial_val", self.initial_val),
            ("blowups", f64::from(self.blowups)),
            ("cpu_ms", self.cpu_ms),
            ("train_sum", self.train_sum),
            ("train_count", self.train_count as f64),
        ];
        for (k, v) in scalars {
            tensors.insert(format!("{RUN_PREFIX}{k}"), Tensor::scalar(v));
        }
        // A diverged run stops where it failed, possibly mid-step, so the
        // state above is not something to continue from.
        if let Status::Diverged { step } = self.record.status {
            tensors.insert(format!("{RUN_PREFIX}diverged_step"), Tensor::scalar(step as f64));
        }
        // Batches are indexed by step, so the stream position is the step.
        Checkpoint { tensors, step: self.step, rng_position: self.step }
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    /// `history` is the series recorded before the checkpoint.
    pub fn resume(config: &RunConfig, run_id: &str, ckpt: &Checkpoint<f64>, history: Vec<EvalPoint>) -> Result<Self> {
        let task = make_task::<f64>(&config.task)?;
        let params = params_from_checkpoint(ckpt)?;
        check_same_layout(&task.init_params(), &params)?;
        let mut optimizer = config.optimizer.build(&params)?;
        let state: ParamMap<f64> = ckpt
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(OPT_PREFIX).map(|s| (s.to_string(), v.clone())))
            .collect();
        optimizer.import_state(&state, ckpt.step)?;
        if ckpt.rng_position != ckpt.step {
            return Err(Error::input("checkpoint stream position does not match its step"));
        }
        let scalar = |k: &str| -> Result<f64> {
            ckpt.tensors
                .get(&format!("{RUN_PREFIX}{k}"))
                .map(|t| t.as_slice()[0])
                .ok_or_else(|| Error::input(format!("checkpoint is missing `{RUN_PREFIX}{k}`")))
        };
        let record = RunRecord {
            run_id: run_id.to_string(),
            optimizer: config.optimizer.name().to_string(),
            config: config.describe(),
            task: config.task.descriptor(),
            seed: config.task.seed,
            total_steps: config.total_steps,
            averaged: optimizer.averages_iterates(),
            status: match ckpt.tensors.get(&format!("{RUN_PREFIX}diverged_step")) {
                Some(t) => Status::Diverged { step: t.as_slice()[0] as u64 },
                None => Status::Completed,
            },
            series: history,
        };
        Ok(Self {
            config: config.clone(),
            task,
            params,
            optimizer,
            step: ckpt.step,
            record,
            initial_val: scalar("initial_val")?,
            blowups: scalar("blowups")? as u32,
            cpu_ms: scalar("cpu_ms")?,
            train_sum: scalar("train_sum")?,
            train_count: scalar("train_count")? as u64,
        })
    }
}

/// Sum of squares finite: the gradient itself and its outer products can be formed.
fn finite_energy(t: &Tensor<f64>) -> bool {
    t.as_slice().iter().map(|x| x * x).sum::<f64>().is_finite()
}

pub fn params_from_checkpoint(ckpt: &Checkpoint<f64>) -> Result<ParamMap<f64>> {
    let params: ParamMap<f64> = ckpt
        .tensors
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(PARAM_PREFIX).map(|s| (s.to_string(), v.clone())))
        .collect();
    if params.is_empty() {
        return Err(Error::input("checkpoint holds no parameters"));
    }
    Ok(params)
}

fn check_same_layout(want: &ParamMap<f64>, got: &ParamMap<f64>) -> Result<()> {
    let same = want.len() == got.len() && want.iter().all(|(k, v)| got.get(k).is_some_and(|g| g.shape() == v.shape()));
    if same {
        Ok(())
    } else {
        Err(Error::input("checkpoint parameters do not match the task's architecture"))
    }
}

/// Runs a configuration to completion.
pub fn run(config: &RunConfig, run_id: &str) -> Result<RunRecord> {
    let mut t = Trainer::new(config, run_id)?;
    t.run(None)?;
    Ok(t.into_record())
}
