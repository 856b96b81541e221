//! Grid experiments. Every cell is an independent run; cells execute on a
//! pool of `workers` threads and results are gathered after all finish.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use splus_core::harness::TaskKind;
use splus_core::{Error, Result, ScalingMode};

use crate::checkpoint::Checkpoint;
use crate::config::{lr_grid_from, parse_scaling_modes, ConfigFile, OptimizerSpec, RunConfig};
use crate::metrics::{steps_to_baseline, wallclock_to_baseline, StepsTo};
use crate::record::{io_err, RunRecord, SweepIndex};
use crate::runner::{params_from_checkpoint, Trainer};

/// Maps `f` over `items` on up to `workers` threads, preserving order.
pub fn parallel_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<O>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break done;
                        }
                        done.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        for h in handles {
            for (i, o) in h.join().expect("sweep worker panicked") {
                slots[i] = Some(o);
            }
        }
    });
    slots.into_iter().map(|o| o.expect("every job ran")).collect()
}

#[derive(Debug, Clone)]
pub struct Job {
    pub run_id: String,
    pub config: RunConfig,
}

pub fn run_jobs(jobs: &[Job], workers: usize) -> Result<Vec<RunRecord>> {
    parallel_map(jobs, workers, |j| crate::runner::run(&j.config, &j.run_id)).into_iter().collect()
}

fn optimizer_list(cfg: &ConfigFile, default: &[&str]) -> Result<Vec<String>> {
    if let Some(list) = cfg.list::<String>("optimizers")? {
        return Ok(list);
    }
    if let Some(one) = cfg.raw("optimizer") {
        return Ok(vec![one.to_string()]);
    }
    Ok(default.iter().map(|s| s.to_string()).collect())
}

fn seed_list(cfg: &ConfigFile) -> Result<Vec<u64>> {
    Ok(cfg.list("seeds")?.unwrap_or(vec![cfg.get_or("seed", 0)?]))
}

fn lr_tag(lr: f64) -> String {
    format!("{lr:.4e}")
}

/// Writes each record plus `index.json` under `dir` (when given).
pub fn save_records(records: &[RunRecord], dir: Option<&Path>) -> Result<()> {
    if let Some(dir) = dir {
        let runs = dir.join("runs");
        for r in records {
            r.save(&runs)?;
        }
        SweepIndex::from_records(records).save(dir)?;
    }
    Ok(())
}

fn write_text(dir: Option<&Path>, name: &str, text: &str) -> Result<Option<PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(Some(path))
}

/// Plain sweep: optimizers x learning rates x seeds (x cache intervals when listed).
pub fn sweep(cfg: &ConfigFile, workers: usize, out: Option<&Path>) -> Result<Vec<RunRecord>> {
    let caches: Option<Vec<u64>> = cfg.list("cache_intervals")?;
    let mut jobs = Vec::new();
    for name in optimizer_list(cfg, &["splus"])? {
        let view = cfg.for_optimizer(&name);
        let base = RunConfig::for_optimizer(cfg, &name)?;
        for seed in seed_list(&view)? {
            for lr in lr_grid_from(&view)? {
                let cells: Vec<Option<u64>> = match (&caches, base.optimizer.cache_interval()) {
                    (Some(list), Some(_)) => list.iter().copied().map(Some).collect(),
                    _ => vec![None],
                };
                for cache in cells {
                    let mut config = base.clone();
                    config.task.seed = seed;
                    config.optimizer = config.optimizer.with_learning_rate(lr);
                    let mut run_id = format!("{name}-lr{}-seed{seed}", lr_tag(lr));
                    if let Some(c) = cache {
                        config.optimizer = config.optimizer.with_cache_interval(c);
                        write!(run_id, "-cache{c}").expect("String write");
                    }
                    jobs.push(Job { run_id, config });
                }
            }
        }
    }
    let records = run_jobs(&jobs, workers)?;
    save_records(&records, out)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub optimizer: String,
    pub lr: f64,
    pub cache_interval: u64,
    pub record: RunRecord,
}

impl GridCell {
    pub fn diverged(&self) -> bool {
        !self.record.is_completed()
    }
}

pub const STABILITY_HEADER: &str = "optimizer,lr,cache_interval,status,diverged_step,final_val_loss";

pub fn stability_csv(cells: &[GridCell]) -> String {
    let mut s = format!("{STABILITY_HEADER}\n");
    for c in cells {
        let step = match c.record.status {
            crate::record::Status::Diverged { step } => step.to_string(),
            crate::record::Status::Completed => String::new(),
        };
        let status = if c.diverged() { "diverged" } else { "completed" };
        let loss = c.record.final_metric_loss().unwrap_or(f64::NAN);
        writeln!(s, "{},{},{},{status},{step},{loss}", c.optimizer, c.lr, c.cache_interval).expect("String write");
    }
    s
}

/// Learning rate x cache interval, per optimizer (Shampoo and SPlus by default).
pub fn stability_grid(cfg: &ConfigFile, workers: usize, out: Option<&Path>) -> Result<Vec<GridCell>> {
    let caches: Vec<u64> = cfg.list("cache_intervals")?.unwrap_or(vec![5, 10, 25, 100, 500]);
    let mut jobs = Vec::new();
    let mut keys = Vec::new();
    for name in optimizer_list(cfg, &["shampoo", "splus"])? {
        let view = cfg.for_optimizer(&name);
        let base = RunConfig::for_optimizer(cfg, &name)?;
        if base.optimizer.cache_interval().is_none() {
            return Err(Error::input(format!("stability-grid needs optimizers with a cache interval, got `{name}`")));
        }
        for lr in lr_grid_from(&view)? {
            for &cache in &caches {
                let mut config = base.clone();
                config.optimizer = config.optimizer.with_learning_rate(lr).with_cache_interval(cache);
                jobs.push(Job { run_id: format!("{name}-lr{}-cache{cache}", lr_tag(lr)), config });
                keys.push((name.clone(), lr, cache));
            }
        }
    }
    let records = run_jobs(&jobs, workers)?;
    save_records(&records, out)?;
    let cells: Vec<GridCell> = keys
        .into_iter()
        .zip(records)
        .map(|((optimizer, lr, cache_interval), record)| GridCell { optimizer, lr, cache_interval, record })
        .collect();
    write_text(out, "stability_grid.csv", &stability_csv(&cells))?;
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthCell {
    pub scaling_mode: ScalingMode,
    pub width: usize,
    pub lr_index: usize,
    pub lr: f64,
    pub record: RunRecord,
}

impl WidthCell {
    /// Final loss with diverged runs ranked last.
    pub fn score(&self) -> f64 {
        match self.record.final_metric_loss() {
            Some(l) if self.record.is_completed() && l.is_finite() => l,
            _ => f64::INFINITY,
        }
    }
}

/// Per (mode, width): the best learning rate's grid index, value and loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthOptimum {
    pub scaling_mode: ScalingMode,
    pub width: usize,
    pub lr_index: usize,
    pub lr: f64,
    pub final_loss: f64,
}

pub fn width_optima(cells: &[WidthCell]) -> Vec<WidthOptimum> {
    let mut out: Vec<WidthOptimum> = Vec::new();
    for c in cells {
        let better = |o: &WidthOptimum| c.score() < o.final_loss;
        match out.iter_mut().find(|o| o.scaling_mode == c.scaling_mode && o.width == c.width) {
            Some(o) if better(o) => *o = WidthOptimum { lr_index: c.lr_index, lr: c.lr, final_loss: c.score(), ..*o },
            Some(_) => {}
            None => out.push(WidthOptimum {
                scaling_mode: c.scaling_mode,
                width: c.width,
                lr_index: c.lr_index,
                lr: c.lr,
                final_loss: c.score(),
            }),
        }
    }
    out
}

/// Hidden widths of the network for base width `w`: `hidden_layers` layers,
/// cycling through `width_multipliers` (e.g. `1, 4` gives the w / 4w block).
fn hidden_for(cfg: &ConfigFile, w: usize) -> Result<Vec<usize>> {
    let layers: usize = cfg.get_or("hidden_layers", 2)?;
    let mults: Vec<usize> = cfg.list("width_multipliers")?.unwrap_or(vec![1]);
    if layers == 0 || mults.is_empty() {
        return Err(Error::input("hidden_layers and width_multipliers must be non-empty"));
    }
    Ok((0..layers).map(|i| w * mults[i % mults.len()]).collect())
}

/// The SPlus learning-rate sweep repeated for each width and scaling mode.
pub fn width_transfer(cfg: &ConfigFile, workers: usize, out: Option<&Path>) -> Result<Vec<WidthCell>> {
    let widths: Vec<usize> = cfg.list("widths")?.unwrap_or(vec![64, 128, 256, 512]);
    let modes = parse_scaling_modes(cfg)?;
    let name = cfg.raw("optimizer").unwrap_or("splus").to_string();
    let view = cfg.for_optimizer(&name);
    let base = RunConfig::for_optimizer(cfg, &name)?;
    if base.task.kind == TaskKind::Quadratic {
        return Err(Error::input("width-transfer needs a network task"));
    }
    let grid = lr_grid_from(&view)?;
    let mut jobs = Vec::new();
    let mut keys = Vec::new();
    for &mode in &modes {
        for &w in &widths {
            for (k, &lr) in grid.iter().enumerate() {
                let mut config = base.clone();
                config.task.hidden = hidden_for(&view, w)?;
                config.optimizer = match config.optimizer.with_learning_rate(lr) {
                    OptimizerSpec::SPlus(mut c) => {
                        c.scaling_mode = mode;
                        OptimizerSpec::SPlus(c)
                    }
                    other => other,
                };
                jobs.push(Job { run_id: format!("{name}-{mode}-w{w}-lr{}", lr_tag(lr)), config });
                keys.push((mode, w, k, lr));
            }
        }
    }
    let records = run_jobs(&jobs, workers)?;
    save_records(&records, out)?;
    let cells: Vec<WidthCell> = keys
        .into_iter()
        .zip(records)
        .map(|((scaling_mode, width, lr_index, lr), record)| WidthCell { scaling_mode, width, lr_index, lr, record })
        .collect();
    let mut csv = String::from("scaling_mode,width,lr,status,final_loss\n");
    for c in &cells {
        let loss = c.record.final_metric_loss().unwrap_or(f64::NAN);
        writeln!(csv, "{},{},{},{},{loss}", c.scaling_mode, c.width, c.lr, c.record.status).expect("String write");
    }
    write_text(out, "width_transfer.csv", &csv)?;
    let mut best = String::from("scaling_mode,width,best_lr,best_lr_index,final_loss\n");
    for o in width_optima(&cells) {
        writeln!(best, "{},{},{},{},{}", o.scaling_mode, o.width, o.lr, o.lr_index, o.final_loss)
            .expect("String write");
    }
    write_text(out, "width_transfer_argmin.csv", &best)?;
    Ok(cells)
}

/// One run per seed; each emits its live and eval-parameter curves side by side.
pub fn averaging_compare(cfg: &ConfigFile, workers: usize, out: Option<&Path>) -> Result<Vec<RunRecord>> {
    let base = RunConfig::from_config(cfg)?;
    let jobs: Vec<Job> = seed_list(cfg)?
        .into_iter()
        .map(|seed| {
            let mut config = base.clone();
            config.task.seed = seed;
            Job { run_id: format!("{}-seed{seed}", base.optimizer.name()), config }
        })
        .collect();
    let records = run_jobs(&jobs, workers)?;
    save_records(&records, out)?;
    for r in &records {
        let mut csv = String::from("step,val_loss_live,val_loss_eval\n");
        for p in &r.series {
            writeln!(csv, "{},{},{}", p.step, p.val_loss_live, p.val_loss_eval).expect("String write");
        }
        write_text(out, &format!("averaging_{}.csv", r.run_id), &csv)?;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub stage: usize,
    pub stage_step: u64,
    pub optimizer: String,
    pub best_lr: f64,
    pub final_loss: f64,
    pub steps_to: StepsTo,
    pub wallclock_to: StepsTo,
    /// Every learning-rate run for this stage and optimizer.
    pub runs: Vec<RunRecord>,
}

pub const STAGE_HEADER: &str = "stage,stage_step,optimizer,best_lr,final_loss,steps_to_baseline,wallclock_to_baseline";

pub fn stage_csv(rows: &[StageRow]) -> String {
    let mut s = format!("{STAGE_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.stage, r.stage_step, r.optimizer, r.best_lr, r.final_loss, r.steps_to, r.wallclock_to
        )
        .expect("String write");
    }
    s
}

/// Base checkpoints: either listed under `checkpoints`, or produced by a
/// base run (`base_optimizer`, `base_lr`, `base_steps`) saved at the step
/// fractions in `stages`.
fn base_checkpoints(cfg: &ConfigFile, out: Option<&Path>) -> Result<Vec<Checkpoint<f64>>> {
    if let Some(paths) = cfg.list::<String>("checkpoints")? {
        return paths.iter().map(|p| Checkpoint::load(&cfg.resolve(p))).collect();
    }
    let base_name: String = cfg.get_or("base_optimizer", "adam".to_string())?;
    let mut base = RunConfig::for_optimizer(cfg, &base_name)?;
    base.total_steps = cfg.get_or("base_steps", base.total_steps)?;
    if let Some(lr) = cfg.get::<f64>("base_lr")? {
        base.optimizer = base.optimizer.with_learning_rate(lr);
    }
    let fractions: Vec<f64> = cfg.list("stages")?.unwrap_or(vec![0.0, 0.25, 0.75]);
    let mut at: Vec<u64> = Vec::new();
    for f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::input(format!("stage fraction {f} outside [0, 1]")));
        }
        at.push((f * base.total_steps as f64).round() as u64);
    }
    let mut trainer = Trainer::new(&base, "base")?;
    let mut ckpts = Vec::new();
    for &s in &at {
        while trainer.step < s && !trainer.is_finished() {
            trainer.advance()?;
        }
        if !trainer.record.is_completed() {
            return Err(Error::input(format!("base run diverged before step {s}: {}", trainer.record.status)));
        }
        let ck = trainer.checkpoint();
        if let Some(dir) = out {
            ck.save(&dir.join("base").join(format!("stage_{}.ckpt", ckpts.len())))?;
        }
        ckpts.push(ck);
    }
    Ok(ckpts)
}

/// For each base checkpoint, sweeps every optimizer's learning rate from
/// that point and reports the best run against the baseline optimizer.
pub fn stage_eval(cfg: &ConfigFile, workers: usize, out: Option<&Path>) -> Result<Vec<StageRow>> {
    let ckpts = base_checkpoints(cfg, out)?;
    let baseline_name: String = cfg.get_or("base_optimizer", "adam".to_string())?;
    let mut names = optimizer_list(cfg, &["adam", "splus"])?;
    if !names.contains(&baseline_name) {
        names.insert(0, baseline_name.clone());
    }

    let mut jobs = Vec::new();
    let mut keys = Vec::new();
    for (stage, ck) in ckpts.iter().enumerate() {
        for name in &names {
            let view = cfg.for_optimizer(name);
            let config = RunConfig::for_optimizer(cfg, name)?;
            for lr in lr_grid_from(&view)? {
                let mut c = config.clone();
                c.optimizer = c.optimizer.with_learning_rate(lr);
                jobs.push((stage, ck, Job { run_id: format!("stage{stage}-{name}-lr{}", lr_tag(lr)), config: c }));
                keys.push((stage, name.clone(), lr));
            }
        }
    }
    let records: Vec<RunRecord> = parallel_map(&jobs, workers, |(_, ck, job)| {
        let params = params_from_checkpoint(ck)?;
        let mut t = Trainer::from_params(&job.config, &job.run_id, params)?;
        t.run(None)?;
        Ok(t.into_record())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    save_records(&records, out.map(|d| d.join("stage_runs")).as_deref())?;

    let mut rows = Vec::new();
    for (stage, ck) in ckpts.iter().enumerate() {
        let best_of = |name: &str| -> Option<(f64, RunRecord, Vec<RunRecord>)> {
            let runs: Vec<(f64, RunRecord)> = keys
                .iter()
                .zip(&records)
                .filter(|((s, n, _), _)| *s == stage && n == name)
                .map(|((_, _, lr), r)| (*lr, r.clone()))
                .collect();
            let best = runs
                .iter()
                .filter(|(_, r)| r.is_completed())
                .min_by(|a, b| {
                    let la = a.1.final_metric_loss().unwrap_or(f64::INFINITY);
                    let lb = b.1.final_metric_loss().unwrap_or(f64::INFINITY);
                    la.total_cmp(&lb)
                })
                .cloned();
            best.map(|(lr, r)| (lr, r, runs.into_iter().map(|x| x.1).collect()))
        };
        let Some((_, baseline, _)) = best_of(&baseline_name) else {
            return Err(Error::input(format!("stage {stage}: every `{baseline_name}` run diverged")));
        };
        for name in &names {
            let (best_lr, best, runs, steps_to, wallclock_to) = match best_of(name) {
                Some((lr, r, runs)) => {
                    let s = steps_to_baseline(&r, &baseline)?;
                    let w = wallclock_to_baseline(&r, &baseline)?;
                    (lr, Some(r), runs, s, w)
                }
                None => (f64::NAN, None, Vec::new(), StepsTo::NotReached, StepsTo::NotReached),
            };
            rows.push(StageRow {
                stage,
                stage_step: ck.step,
                optimizer: name.clone(),
                best_lr,
                final_loss: best.and_then(|r| r.final_metric_loss()).unwrap_or(f64::NAN),
                steps_to,
                wallclock_to,
                runs,
            });
        }
    }
    write_text(out, "stage_eval.csv", &stage_csv(&rows))?;
    Ok(rows)
}
