//! Flat `key = value` configuration files.
//!
//! ```text
//! # noisy quadratic, SPlus
//! task = quadratic
//! noise = 0.5
//! optimizer = splus
//! lr = 0.05
//! cache_intervals = 5, 10, 25
//! shampoo.lr = 1e-3        # applies only when the optimizer is shampoo
//! ```
//!
//! Values are strings, numbers or comma-separated lists. A key of the form
//! `<optimizer>.<key>` overrides `<key>` for that optimizer only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use splus_core::harness::{Activation, TaskKind, TaskSpec};
use splus_core::optim::ScalingMode;
use splus_core::{
    Adam, AdamConfig, Error, Optimizer, ParamMap, Result, SPlusConfig, SPlusState, Sgd, SgdConfig, Shampoo,
    ShampooConfig, SignSgd, SignSgdConfig,
};

pub const OPTIMIZERS: [&str; 5] = ["splus", "adam", "sgd", "signsgd", "shampoo"];

const KEYS: &[&str] = &[
    // task
    "task",
    "seed",
    "rows",
    "cols",
    "condition",
    "noise",
    "input_dim",
    "output_dim",
    "hidden",
    "activation",
    "bias",
    "teacher_hidden",
    "head_init_scale",
    "batch_size",
    "val_size",
    "path",
    // optimizer
    "optimizer",
    "lr",
    "beta1",
    "beta2",
    "ema_rate",
    "eps",
    "inverse_every",
    "nonstandard_constant",
    "weight_decay",
    "max_dim",
    "scaling_mode",
    "warmup_steps",
    "pseudocode_scale",
    "spectral_fan_in",
    "momentum",
    "eps_clamp",
    // run
    "total_steps",
    "eval_every",
    "checkpoint_every",
    // sweeps
    "optimizers",
    "lr_grid",
    "lr_grid_start",
    "lr_grid_points",
    "cache_intervals",
    "widths",
    "hidden_layers",
    "width_multipliers",
    "scaling_modes",
    "seeds",
    "base_optimizer",
    "base_lr",
    "base_steps",
    "stages",
    "checkpoints",
];

/// Parsed key-value pairs, in file order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    /// Directory of the file, for resolving relative paths.
    pub base_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::input(format!("config line {lineno}: expected `key = value`")))?;
            let key = key.trim();
            let value = unquote(value.trim());
            let bare =
                key.split_once('.').map_or(key, |(opt, rest)| if OPTIMIZERS.contains(&opt) { rest } else { key });
            if !KEYS.contains(&bare) {
                return Err(Error::input(format!("config line {lineno}: unknown key `{key}`")));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::input(format!("config line {lineno}: duplicate key `{key}`")));
            }
        }
        Ok(Self { values, base_dir: None })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Input(msg) => Error::input(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// A view where `<optimizer>.<key>` entries shadow `<key>`.
    pub fn for_optimizer(&self, optimizer: &str) -> Self {
        let mut out = BTreeMap::new();
        for (k, v) in &self.values {
            match k.split_once('.') {
                Some((opt, rest)) if OPTIMIZERS.contains(&opt) => {
                    if opt == optimizer {
                        out.insert(rest.to_string(), v.clone());
                    }
                }
                _ => {
                    out.entry(k.clone()).or_insert_with(|| v.clone());
                }
            }
        }
        Self { values: out, base_dir: self.base_dir.clone() }
    }

    pub fn get<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.raw(key)
            .map(|s| s.parse::<V>().map_err(|_| Error::input(format!("config key `{key}`: cannot parse `{s}`"))))
            .transpose()
    }

    pub fn get_or<V: std::str::FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<V: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        self.raw(key)
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| {
                        x.parse::<V>().map_err(|_| Error::input(format!("config key `{key}`: cannot parse `{x}`")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(other) => Err(Error::input(format!("config key `{key}`: `{other}` is not a boolean"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|p| self.resolve(p))
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

/// Optimizer choice with its full hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerSpec {
    SPlus(SPlusConfig<f64>),
    Adam(AdamConfig<f64>),
    Sgd(SgdConfig<f64>),
    SignSgd(SignSgdConfig<f64>),
    Shampoo(ShampooConfig<f64>),
}

impl OptimizerSpec {
    pub fn from_config(name: &str, cfg: &ConfigFile) -> Result<Self> {
        let spec = match name {
            "splus" => {
                let d = SPlusConfig::<f64>::default();
                let c = SPlusConfig {
                    learning_rate: cfg.get_or("lr", d.learning_rate)?,
                    beta1: cfg.get_or("beta1", d.beta1)?,
                    beta2: cfg.get_or("beta2", d.beta2)?,
                    ema_rate: cfg.get_or("ema_rate", d.ema_rate)?,
                    eps: cfg.get_or("eps", d.eps)?,
                    inverse_every: cfg.get_or("inverse_every", d.inverse_every)?,
                    nonstandard_constant: cfg.get_or("nonstandard_constant", d.nonstandard_constant)?,
                    weight_decay: cfg.get_or("weight_decay", d.weight_decay)?,
                    max_dim: cfg.get_or("max_dim", d.max_dim)?,
                    scaling_mode: cfg.get_or("scaling_mode", d.scaling_mode)?,
                    warmup_steps: cfg.get_or("warmup_steps", d.warmup_steps)?,
                    pseudocode_scale: cfg.get_bool("pseudocode_scale", d.pseudocode_scale)?,
                    spectral_fan_in: cfg.get_bool("spectral_fan_in", d.spectral_fan_in)?,
                };
                c.validate()?;
                Self::SPlus(c)
            }
            "adam" => {
                let d = AdamConfig::<f64>::default();
                Self::Adam(AdamConfig {
                    learning_rate: cfg.get_or("lr", d.learning_rate)?,
                    beta1: cfg.get_or("beta1", d.beta1)?,
                    beta2: cfg.get_or("beta2", d.beta2)?,
                    eps: cfg.get_or("eps", d.eps)?,
                    weight_decay: cfg.get_or("weight_decay", d.weight_decay)?,
                    warmup_steps: cfg.get_or("warmup_steps", d.warmup_steps)?,
                })
            }
            "sgd" => {
                let d = SgdConfig::<f64>::default();
                Self::Sgd(SgdConfig {
                    learning_rate: cfg.get_or("lr", d.learning_rate)?,
                    momentum: cfg.get_or("momentum", d.momentum)?,
                    weight_decay: cfg.get_or("weight_decay", d.weight_decay)?,
                    warmup_steps: cfg.get_or("warmup_steps", d.warmup_steps)?,
                })
            }
            "signsgd" => {
                let d = SignSgdConfig::<f64>::default();
                Self::SignSgd(SignSgdConfig {
                    learning_rate: cfg.get_or("lr", d.learning_rate)?,
                    beta1: cfg.get_or("beta1", d.beta1)?,
                    weight_decay: cfg.get_or("weight_decay", d.weight_decay)?,
                    warmup_steps: cfg.get_or("warmup_steps", d.warmup_steps)?,
                })
            }
            "shampoo" => {
                let d = ShampooConfig::<f64>::default();
                Self::Shampoo(ShampooConfig {
                    learning_rate: cfg.get_or("lr", d.learning_rate)?,
                    beta1: cfg.get_or("beta1", d.beta1)?,
                    beta2: cfg.get_or("beta2", d.beta2)?,
                    inverse_every: cfg.get_or("inverse_every", d.inverse_every)?,
                    eps_clamp: cfg.get_or("eps_clamp", d.eps_clamp)?,
                    weight_decay: cfg.get_or("weight_decay", d.weight_decay)?,
                    max_dim: cfg.get_or("max_dim", d.max_dim)?,
                    warmup_steps: cfg.get_or("warmup_steps", d.warmup_steps)?,
                })
            }
            other => {
                return Err(Error::input(format!("unknown optimizer `{other}` ({})", OPTIMIZERS.join("|"))));
            }
        };
        let lr = spec.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::input(format!("lr must be finite and >= 0, got {lr}")));
        }
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SPlus(_) => "splus",
            Self::Adam(_) => "adam",
            Self::Sgd(_) => "sgd",
            Self::SignSgd(_) => "signsgd",
            Self::Shampoo(_) => "shampoo",
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Self::SPlus(c) => c.learning_rate,
            Self::Adam(c) => c.learning_rate,
            Self::Sgd(c) => c.learning_rate,
            Self::SignSgd(c) => c.learning_rate,
            Self::Shampoo(c) => c.learning_rate,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        match &mut self {
            Self::SPlus(c) => c.learning_rate = lr,
            Self::Adam(c) => c.learning_rate = lr,
            Self::Sgd(c) => c.learning_rate = lr,
            Self::SignSgd(c) => c.learning_rate = lr,
            Self::Shampoo(c) => c.learning_rate = lr,
        }
        self
    }

    /// Sets the eigenbasis / inverse refresh interval; a no-op for
    /// optimizers without one.
    pub fn with_cache_interval(mut self, every: u64) -> Self {
        match &mut self {
            Self::SPlus(c) => c.inverse_every = every,
            Self::Shampoo(c) => c.inverse_every = every,
            _ => {}
        }
        self
    }

    pub fn cache_interval(&self) -> Option<u64> {
        match self {
            Self::SPlus(c) => Some(c.inverse_every),
            Self::Shampoo(c) => Some(c.inverse_every),
            _ => None,
        }
    }

    pub fn build(&self, params: &ParamMap<f64>) -> Result<Box<dyn Optimizer<f64>>> {
        Ok(match self {
            Self::SPlus(c) => Box::new(SPlusState::init(params, c.clone())?),
            Self::Adam(c) => Box::new(Adam::new(params, c.clone())),
            Self::Sgd(c) => Box::new(Sgd::new(params, c.clone())),
            Self::SignSgd(c) => Box::new(SignSgd::new(params, c.clone())),
            Self::Shampoo(c) => Box::new(Shampoo::new(params, c.clone())?),
        })
    }

    /// Every hyperparameter as `key -> value`, for run metadata.
    pub fn describe(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("optimizer", self.name().to_string());
        match self {
            Self::SPlus(c) => {
                put("lr", c.learning_rate.to_string());
                put("beta1", c.beta1.to_string());
                put("beta2", c.beta2.to_string());
                put("ema_rate", c.ema_rate.to_string());
                put("eps", c.eps.to_string());
                put("inverse_every", c.inverse_every.to_string());
                put("nonstandard_constant", c.nonstandard_constant.to_string());
                put("weight_decay", c.weight_decay.to_string());
                put("max_dim", c.max_dim.to_string());
                put("scaling_mode", c.scaling_mode.to_string());
                put("warmup_steps", c.warmup_steps.to_string());
                put("pseudocode_scale", c.pseudocode_scale.to_string());
                put("spectral_fan_in", c.spectral_fan_in.to_string());
            }
            Self::Adam(c) => {
                put("lr", c.learning_rate.to_string());
                put("beta1", c.beta1.to_string());
                put("beta2", c.beta2.to_string());
                put("eps", c.eps.to_string());
                put("weight_decay", c.weight_decay.to_string());
                put("warmup_steps", c.warmup_steps.to_string());
            }
            Self::Sgd(c) => {
                put("lr", c.learning_rate.to_string());
                put("momentum", c.momentum.to_string());
                put("weight_decay", c.weight_decay.to_string());
                put("warmup_steps", c.warmup_steps.to_string());
            }
            Self::SignSgd(c) => {
                put("lr", c.learning_rate.to_string());
                put("beta1", c.beta1.to_string());
                put("weight_decay", c.weight_decay.to_string());
                put("warmup_steps", c.warmup_steps.to_string());
            }
            Self::Shampoo(c) => {
                put("lr", c.learning_rate.to_string());
                put("beta1", c.beta1.to_string());
                put("beta2", c.beta2.to_string());
                put("inverse_every", c.inverse_every.to_string());
                put("eps_clamp", c.eps_clamp.to_string());
                put("weight_decay", c.weight_decay.to_string());
                put("max_dim", c.max_dim.to_string());
                put("warmup_steps", c.warmup_steps.to_string());
            }
        }
        m
    }
}

pub fn task_from_config(cfg: &ConfigFile) -> Result<TaskSpec> {
    let d = TaskSpec::default();
    let kind: TaskKind = cfg.get_or("task", d.kind)?;
    let spec = TaskSpec {
        kind,
        seed: cfg.get_or("seed", d.seed)?,
        rows: cfg.get_or("rows", d.rows)?,
        cols: cfg.get_or("cols", d.cols)?,
        condition: cfg.get_or("condition", d.condition)?,
        noise: cfg.get_or("noise", d.noise)?,
        input_dim: cfg.get_or("input_dim", d.input_dim)?,
        output_dim: cfg.get_or("output_dim", d.output_dim)?,
        hidden: cfg.list("hidden")?.unwrap_or(d.hidden),
        activation: cfg.get_or::<Activation>("activation", d.activation)?,
        bias: cfg.get_bool("bias", d.bias)?,
        teacher_hidden: cfg.list("teacher_hidden")?.unwrap_or(d.teacher_hidden),
        head_init_scale: cfg.get_or("head_init_scale", d.head_init_scale)?,
        batch_size: cfg.get_or("batch_size", d.batch_size)?,
        val_size: cfg.get_or("val_size", d.val_size)?,
        path: cfg.path("path"),
    };
    if kind == TaskKind::FileDataset && spec.path.is_none() {
        return Err(Error::input("task = file_dataset needs `path`"));
    }
    Ok(spec)
}

/// One training run: task, optimizer and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub optimizer: OptimizerSpec,
    pub total_steps: u64,
    pub eval_every: u64,
    /// Save a checkpoint every this many steps (0: never).
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let name: String = cfg.get_or("optimizer", "splus".to_string())?;
        Self::for_optimizer(cfg, &name)
    }

    pub fn for_optimizer(cfg: &ConfigFile, name: &str) -> Result<Self> {
        let view = cfg.for_optimizer(name);
        let eval_every = view.get_or("eval_every", 10)?;
        if eval_every == 0 {
            return Err(Error::input("eval_every must be positive"));
        }
        Ok(Self {
            task: task_from_config(&view)?,
            optimizer: OptimizerSpec::from_config(name, &view)?,
            total_steps: view.get_or("total_steps", 1000)?,
            eval_every,
            checkpoint_every: view.get_or("checkpoint_every", 0)?,
        })
    }

    /// Flat description of everything that determines the run.
    pub fn describe(&self) -> BTreeMap<String, String> {
        let mut m = self.optimizer.describe();
        m.insert("task".into(), self.task.descriptor());
        m.insert("seed".into(), self.task.seed.to_string());
        m.insert("batch_size".into(), self.task.batch_size.to_string());
        m.insert("total_steps".into(), self.total_steps.to_string());
        m.insert("eval_every".into(), self.eval_every.to_string());
        m
    }
}

/// Learning rates `start * 10^(k/3)` for `k = 0..points`.
pub fn lr_grid(start: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| start * 10f64.powf(k as f64 / 3.0)).collect()
}

/// The learning-rate grid named by a config: `lr_grid_start` and
/// `lr_grid_points`, or the single `lr`.
pub fn lr_grid_from(cfg: &ConfigFile) -> Result<Vec<f64>> {
    if let Some(list) = cfg.list::<f64>("lr_grid")? {
        check_grid_ratio(&list)?;
        return Ok(list);
    }
    match (cfg.get::<f64>("lr_grid_start")?, cfg.get::<usize>("lr_grid_points")?) {
        (Some(start), Some(points)) if start > 0.0 && points > 0 => Ok(lr_grid(start, points)),
        (Some(_), Some(_)) => Err(Error::input("lr_grid_start must be > 0 and lr_grid_points >= 1")),
        (None, None) => Ok(vec![cfg.get_or("lr", 0.2)?]),
        _ => Err(Error::input("lr_grid_start and lr_grid_points go together")),
    }
}

/// Explicit grids must still step by `10^(1/3)`, to three significant digits.
fn check_grid_ratio(list: &[f64]) -> Result<()> {
    let ratio = 10f64.powf(1.0 / 3.0);
    for w in list.windows(2) {
        if w[0] > 0.0 && ((w[1] / w[0]) / ratio - 1.0).abs() > 5e-3 {
            return Err(Error::input(format!("lr_grid step {} -> {} is not a factor of 10^(1/3)", w[0], w[1])));
        }
    }
    Ok(())
}

/// Canonical name for a scaling mode list entry.
pub fn parse_scaling_modes(cfg: &ConfigFile) -> Result<Vec<ScalingMode>> {
    Ok(cfg.list::<ScalingMode>("scaling_modes")?.unwrap_or_else(|| vec![ScalingMode::Symmetric]))
}
