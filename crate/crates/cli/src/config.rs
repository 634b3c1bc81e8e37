//! Experiment configuration: per-subcommand defaults, command-line flags and
//! `key = value` config files (which override flags).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coeffid::forward::StateForm;
use coeffid::objectives::ObjectiveKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Table1,
    Table2,
    Table3,
    Failure,
    ProbeFcd,
    ProbeScd,
    CheckGradients,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Table1 => "table1",
            Experiment::Table2 => "table2",
            Experiment::Table3 => "table3",
            Experiment::Failure => "failure",
            Experiment::ProbeFcd => "probe-fcd",
            Experiment::ProbeScd => "probe-scd",
            Experiment::CheckGradients => "check-gradients",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub sizes: Vec<usize>,
    pub objective: ObjectiveKind,
    pub kappa: f64,
    pub eps: f64,
    pub tau: f64,
    pub deltas: Vec<f64>,
    pub nu: f64,
    pub seed: u64,
    /// `ell(v) = <z, v>_V` instead of `ell = 0`
    pub steering: bool,
    pub form: StateForm,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// number of entries of the default schedule (probes only)
    pub schedule_len: usize,
    /// `tau_n = eps_n^p`; `p = 1` gives the degenerate schedule
    pub tau_power: f64,
    pub out: PathBuf,
    pub write_fields: bool,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            sizes: vec![30, 40, 50, 60, 70, 80],
            objective: ObjectiveKind::Ols,
            kappa: 1e-4,
            eps: 1e-4,
            tau: 0.0,
            deltas: vec![0.0],
            nu: 0.0,
            seed: 2024,
            steering: false,
            form: StateForm::PureNeumann,
            max_iters: 500,
            grad_tol: 1e-8,
            schedule_len: 8,
            tau_power: 2.0,
            out: PathBuf::from("out"),
            write_fields: true,
        };
        match experiment {
            Experiment::Table1 => base,
            Experiment::Table2 => Self {
                objective: ObjectiveKind::Mols,
                kappa: 1e-2,
                ..base
            },
            Experiment::Table3 => Self {
                sizes: vec![80],
                deltas: vec![1e-1, 1e-2, 1e-3],
                ..base
            },
            Experiment::Failure => Self {
                sizes: vec![60],
                eps: 0.0,
                ..base
            },
            Experiment::ProbeFcd | Experiment::ProbeScd => Self {
                sizes: vec![16],
                form: StateForm::Coercive,
                ..base
            },
            Experiment::CheckGradients => Self {
                sizes: vec![4],
                eps: 1e-2,
                tau: 1e-3,
                kappa: 1e-3,
                deltas: vec![0.1],
                ..base
            },
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "n" | "sizes" => self.sizes = parse_list(v)?,
            "objective" => self.objective = parse_objective(v)?,
            "kappa" => self.kappa = parse(v)?,
            "eps" => self.eps = parse(v)?,
            "tau" => self.tau = parse(v)?,
            "delta" | "deltas" => self.deltas = parse_list(v)?,
            "nu" => self.nu = parse(v)?,
            "seed" => self.seed = parse(v)?,
            "steering" => self.steering = parse(v)?,
            "form" => self.form = parse_form(v)?,
            "max_iters" => self.max_iters = parse(v)?,
            "grad_tol" => self.grad_tol = parse(v)?,
            "schedule_len" => self.schedule_len = parse(v)?,
            "tau_power" => self.tau_power = parse(v)?,
            "out" => self.out = PathBuf::from(v),
            "write_fields" => self.write_fields = parse(v)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Reads a `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{}:{}: expected key = value", path.display(), i + 1);
            };
            self.set(k, v).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            bail!("mesh sizes must be positive");
        }
        if self.deltas.is_empty() {
            bail!("at least one noise level is required");
        }
        if self.kappa < 0.0 || self.eps < 0.0 || self.tau < 0.0 || self.nu < 0.0 || self.deltas.iter().any(|&d| d < 0.0) {
            bail!("kappa, eps, tau, nu and delta must be >= 0");
        }
        if !(self.grad_tol > 0.0) || self.max_iters == 0 {
            bail!("grad_tol and max_iters must be positive");
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow::anyhow!("cannot parse `{v}`: {e}"))
}

pub fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(s.trim())).collect()
}

pub fn parse_objective(v: &str) -> Result<ObjectiveKind> {
    match v.to_ascii_lowercase().as_str() {
        "ols" => Ok(ObjectiveKind::Ols),
        "mols" => Ok(ObjectiveKind::Mols),
        _ => bail!("objective must be ols or mols, got `{v}`"),
    }
}

pub fn parse_form(v: &str) -> Result<StateForm> {
    match v.to_ascii_lowercase().as_str() {
        "neumann" | "pure-neumann" => Ok(StateForm::PureNeumann),
        "coercive" => Ok(StateForm::Coercive),
        _ => bail!("form must be neumann or coercive, got `{v}`"),
    }
}
