//! Run records and their CSV / JSON forms.
//!
//! A run is written as `<run_id>.csv` (the evaluation series) next to
//! `<run_id>.json` (everything else). Floats are written in Rust's shortest
//! round-trip form, so parse followed by emit reproduces a file exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splus_core::{Error, Result};

pub const CSV_HEADER: &str = "step,train_loss,val_loss_live,val_loss_eval,effective_lr,wallclock_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    /// Mean training loss over the steps since the previous evaluation
    /// (at step 0: the loss of the first batch at initialization).
    pub train_loss: f64,
    pub val_loss_live: f64,
    /// Validation loss at the optimizer's evaluation parameters; equals
    /// `val_loss_live` for optimizers that do not average iterates.
    pub val_loss_eval: f64,
    pub effective_lr: f64,
    /// CPU time spent in gradient computation and optimizer updates.
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Status {
    Completed,
    Diverged { step: u64 },
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Completed => f.write_str("completed"),
            Self::Diverged { step } => write!(f, "diverged@{step}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub optimizer: String,
    pub config: BTreeMap<String, String>,
    pub task: String,
    pub seed: u64,
    pub total_steps: u64,
    /// Whether `val_loss_eval` comes from averaged parameters.
    pub averaged: bool,
    pub status: Status,
    #[serde(skip)]
    pub series: Vec<EvalPoint>,
}

impl RunRecord {
    pub fn final_point(&self) -> Option<&EvalPoint> {
        self.series.last()
    }

    /// The loss comparisons use: eval parameters when averaging, live otherwise.
    pub fn metric_loss(&self, p: &EvalPoint) -> f64 {
        if self.averaged {
            p.val_loss_eval
        } else {
            p.val_loss_live
        }
    }

    pub fn final_metric_loss(&self) -> Option<f64> {
        self.final_point().map(|p| self.metric_loss(p))
    }

    pub fn is_completed(&self) -> bool {
        self.status == Status::Completed
    }

    pub fn to_csv(&self) -> String {
        series_to_csv(&self.series)
    }

    pub fn final_losses(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if let Some(p) = self.final_point() {
            m.insert("train".to_string(), p.train_loss);
            m.insert("val_live".to_string(), p.val_loss_live);
            m.insert("val_eval".to_string(), p.val_loss_eval);
        }
        m
    }

    /// Writes `<run_id>.csv` and `<run_id>.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.run_id));
        std::fs::write(&csv, self.to_csv()).map_err(|e| io_err(&csv, e))?;
        let json = dir.join(format!("{}.json", self.run_id));
        let text = serde_json::to_string_pretty(self).expect("records serialize");
        std::fs::write(&json, text + "\n").map_err(|e| io_err(&json, e))?;
        Ok(csv)
    }

    /// Loads a run from its CSV path (or either file of the pair).
    pub fn load(path: &Path) -> Result<Self> {
        let csv = path.with_extension("csv");
        let json = path.with_extension("json");
        let meta = std::fs::read_to_string(&json).map_err(|e| io_err(&json, e))?;
        let mut rec: RunRecord =
            serde_json::from_str(&meta).map_err(|e| Error::input(format!("{}: {e}", json.display())))?;
        let text = std::fs::read_to_string(&csv).map_err(|e| io_err(&csv, e))?;
        rec.series = parse_csv(&text).map_err(|e| match e {
            Error::Input(msg) => Error::input(format!("{}: {msg}", csv.display())),
            other => other,
        })?;
        Ok(rec)
    }
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::input(format!("{}: {e}", path.display()))
}

pub fn series_to_csv(series: &[EvalPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in series {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.step, p.train_loss, p.val_loss_live, p.val_loss_eval, p.effective_lr, p.wallclock_ms
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<EvalPoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        _ => return Err(Error::input(format!("line 1: expected header `{CSV_HEADER}`"))),
    }
    let mut series: Vec<EvalPoint> = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::input(format!("line {lineno}: {} fields, expected 6", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::input(format!("line {lineno}: `{}` is not a number", f[i])))
        };
        let step: u64 = f[0].parse().map_err(|_| Error::input(format!("line {lineno}: bad step `{}`", f[0])))?;
        if series.last().is_some_and(|p| p.step >= step) {
            return Err(Error::input(format!("line {lineno}: steps must be strictly increasing")));
        }
        series.push(EvalPoint {
            step,
            train_loss: num(1)?,
            val_loss_live: num(2)?,
            val_loss_eval: num(3)?,
            effective_lr: num(4)?,
            wallclock_ms: num(5)?,
        });
    }
    Ok(series)
}

/// One entry of a sweep's `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub run_id: String,
    pub config: BTreeMap<String, String>,
    pub status: String,
    pub final_losses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepIndex {
    pub runs: Vec<IndexEntry>,
}

impl SweepIndex {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Self {
        Self {
            runs: records
                .into_iter()
                .map(|r| IndexEntry {
                    run_id: r.run_id.clone(),
                    config: r.config.clone(),
                    status: r.status.to_string(),
                    final_losses: r.final_losses(),
                })
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("index.json");
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}
