//! Steps-to-baseline and wallclock-to-baseline.
//!
//! The candidate "matches" at the first evaluated step whose loss is at or
//! below the baseline's final loss. No interpolation between evaluations.

use std::fmt;

use splus_core::{Error, Result};

use crate::record::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsTo {
    Fraction(f64),
    /// Never matched within the run; printed as `>1.0`.
    NotReached,
}

impl StepsTo {
    pub fn fraction(self) -> Option<f64> {
        match self {
            Self::Fraction(f) => Some(f),
            Self::NotReached => None,
        }
    }

    /// Sort key: unreached sorts after every fraction.
    pub fn key(self) -> f64 {
        self.fraction().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for StepsTo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fraction(x) => write!(f, "{x}"),
            Self::NotReached => f.write_str(">1.0"),
        }
    }
}

fn check_comparable(candidate: &RunRecord, baseline: &RunRecord) -> Result<f64> {
    if candidate.task != baseline.task || candidate.seed != baseline.seed {
        return Err(Error::contract(format!(
            "runs are not comparable: `{}` (seed {}) vs `{}` (seed {})",
            candidate.task, candidate.seed, baseline.task, baseline.seed
        )));
    }
    if !baseline.is_completed() {
        return Err(Error::contract(format!("baseline `{}` did not complete ({})", baseline.run_id, baseline.status)));
    }
    baseline
        .final_metric_loss()
        .ok_or_else(|| Error::contract(format!("baseline `{}` has no evaluations", baseline.run_id)))
}

fn first_match(candidate: &RunRecord, target: f64) -> Option<usize> {
    candidate.series.iter().position(|p| candidate.metric_loss(p) <= target)
}

/// Fraction of the candidate's steps needed to reach the baseline's final loss.
pub fn steps_to_baseline(candidate: &RunRecord, baseline: &RunRecord) -> Result<StepsTo> {
    let target = check_comparable(candidate, baseline)?;
    Ok(match first_match(candidate, target) {
        Some(i) if candidate.total_steps > 0 => {
            StepsTo::Fraction(candidate.series[i].step as f64 / candidate.total_steps as f64)
        }
        Some(_) => StepsTo::Fraction(1.0),
        None => StepsTo::NotReached,
    })
}

/// Like [`steps_to_baseline`], measured in optimization CPU time relative to
/// the baseline's total.
pub fn wallclock_to_baseline(candidate: &RunRecord, baseline: &RunRecord) -> Result<StepsTo> {
    let target = check_comparable(candidate, baseline)?;
    let total = baseline.final_point().map_or(0.0, |p| p.wallclock_ms);
    Ok(match first_match(candidate, target) {
        Some(i) if total > 0.0 => StepsTo::Fraction(candidate.series[i].wallclock_ms / total),
        Some(_) => StepsTo::Fraction(1.0),
        None => StepsTo::NotReached,
    })
}
