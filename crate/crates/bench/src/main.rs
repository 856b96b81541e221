use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splus_bench::config::ConfigFile;
use splus_bench::metrics::{steps_to_baseline, wallclock_to_baseline};
use splus_bench::record::{RunRecord, SweepIndex};
use splus_bench::runner::Trainer;
use splus_bench::sweep;
use splus_bench::RunConfig;
use splus_core::Error;

#[derive(Parser)]
#[command(name = "splus-bench", about = "Desk-scale optimizer benchmarks for SPlus and its baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV / JSON / checkpoints.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `seed` (and `seeds`) from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// One training run.
    Run(Common),
    /// Learning-rate sweep over optimizers and seeds.
    Sweep(Common),
    /// Learning rate x cache interval divergence grid.
    StabilityGrid(Common),
    /// Learning-rate sweeps across network widths.
    WidthTransfer(Common),
    /// Live versus eval-parameter curves.
    AveragingCompare(Common),
    /// Best-LR steps-to-baseline from base checkpoints.
    StageEval(Common),
    /// Compare two saved runs.
    StepsTo {
        /// Candidate run (.csv or .json).
        candidate: PathBuf,
        /// Baseline run (.csv or .json).
        baseline: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ConfigFile, Error> {
    let mut cfg = ConfigFile::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.set("seed", seed);
        if cfg.contains("seeds") {
            cfg.set("seeds", seed);
        }
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run(c) => {
            let cfg = load_config(&c)?;
            let config = RunConfig::from_config(&cfg)?;
            let run_id = format!("{}-seed{}", config.optimizer.name(), config.task.seed);
            let mut t = Trainer::new(&config, &run_id)?;
            t.run(Some(&c.out.join("checkpoints")))?;
            let rec = t.into_record();
            let path = rec.save(&c.out)?;
            SweepIndex::from_records([&rec]).save(&c.out)?;
            println!("{}: {} final val loss {}", rec.run_id, rec.status, fmt_loss(&rec));
            println!("wrote {}", path.display());
        }
        Command::Sweep(c) => {
            let records = sweep::sweep(&load_config(&c)?, c.workers, Some(&c.out))?;
            for r in &records {
                println!("{}: {} final val loss {}", r.run_id, r.status, fmt_loss(r));
            }
            done(&c.out);
        }
        Command::StabilityGrid(c) => {
            let cells = sweep::stability_grid(&load_config(&c)?, c.workers, Some(&c.out))?;
            print!("{}", sweep::stability_csv(&cells));
            done(&c.out);
        }
        Command::WidthTransfer(c) => {
            let cells = sweep::width_transfer(&load_config(&c)?, c.workers, Some(&c.out))?;
            println!("scaling_mode,width,best_lr,final_loss");
            for o in sweep::width_optima(&cells) {
                println!("{},{},{},{}", o.scaling_mode, o.width, o.lr, o.final_loss);
            }
            done(&c.out);
        }
        Command::AveragingCompare(c) => {
            for r in sweep::averaging_compare(&load_config(&c)?, c.workers, Some(&c.out))? {
                let p = r.final_point().expect("runs have an initial evaluation");
                println!("{}: {} live {} eval {}", r.run_id, r.status, p.val_loss_live, p.val_loss_eval);
            }
            done(&c.out);
        }
        Command::StageEval(c) => {
            let rows = sweep::stage_eval(&load_config(&c)?, c.workers, Some(&c.out))?;
            print!("{}", sweep::stage_csv(&rows));
            done(&c.out);
        }
        Command::StepsTo { candidate, baseline } => {
            let cand = RunRecord::load(&candidate)?;
            let base = RunRecord::load(&baseline)?;
            println!("steps_to_baseline {}", steps_to_baseline(&cand, &base)?);
            println!("wallclock_to_baseline {}", wallclock_to_baseline(&cand, &base)?);
        }
    }
    Ok(())
}

fn fmt_loss(r: &RunRecord) -> String {
    r.final_metric_loss().map_or("n/a".into(), |l| l.to_string())
}

fn done(out: &Path) {
    println!("wrote {}", out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical { .. } | Error::Divergence { .. } => ExitCode::from(2),
                Error::Contract(_) | Error::Input(_) => ExitCode::from(1),
            }
        }
    }
}
