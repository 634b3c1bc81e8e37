//! Command-line experiments for the `coeffid` library: reconstruction
//! tables for the manufactured pure-Neumann problem, the unregularized
//! failure case, derivative-limit probes and derivative checks.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;

use config::{Experiment, ExperimentConfig};

/// Process exit code of a run that reproduced the expected failure.
pub const EXIT_EXPECTED_FAILURE: i32 = 2;

/// Runs one experiment, writes its outputs under `cfg.out` and returns the
/// process exit code together with the main output file.
pub fn run(cfg: &ExperimentConfig) -> Result<(i32, PathBuf)> {
    cfg.validate()?;
    let stem = cfg.experiment.name().replace('-', "_");
    match cfg.experiment {
        Experiment::Table1 | Experiment::Table2 | Experiment::Table3 => {
            let rows = experiments::run_table(cfg)?;
            for r in &rows {
                eprintln!(
                    "{stem}: n={} delta={:e} {} in {} iterations ({:.1} s)",
                    r.n,
                    r.delta,
                    r.status(),
                    r.iterations,
                    r.wall_seconds
                );
            }
            if cfg.write_fields {
                experiments::write_row_fields(cfg, &stem, &rows)?;
            }
            let path = experiments::table_csv(cfg, &rows).write(&cfg.out, &stem)?;
            Ok((0, path))
        }
        Experiment::Failure => {
            let report = experiments::run_failure_demo(cfg)?;
            let path = experiments::failure_csv(cfg, &report).write(&cfg.out, &stem)?;
            if report.failed() {
                eprintln!("failure: eps={:e} gave a singular forward system (expected)", cfg.eps);
                Ok((EXIT_EXPECTED_FAILURE, path))
            } else {
                if report.near_singular {
                    eprintln!("warning: forward system is near-singular at eps={:e}", cfg.eps);
                }
                Ok((0, path))
            }
        }
        Experiment::ProbeFcd | Experiment::ProbeScd => {
            let (records, report) = experiments::run_probe(cfg)?;
            experiments::probe_summary_csv(&report).write(&cfg.out, &format!("{stem}_summary"))?;
            let path = experiments::probe_csv(&records).write(&cfg.out, &stem)?;
            if report.flagged() {
                eprintln!("{stem}: boundedness flag raised (growth={}, schedule={})", report.growth, report.schedule_violation);
            }
            Ok((0, path))
        }
        Experiment::CheckGradients => {
            let checks = experiments::check_gradients(cfg)?;
            let path = experiments::checks_csv(&checks).write(&cfg.out, &stem)?;
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
            if !failed.is_empty() {
                anyhow::bail!("derivative checks failed: {}", failed.join(", "));
            }
            Ok((0, path))
        }
    }
}
