use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coeffid_cli::config::{parse_form, parse_list, parse_objective, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "coeffid", version, about = "Coefficient identification experiments for pure-Neumann problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// OLS reconstruction errors over mesh sizes
    Table1(Flags),
    /// MOLS reconstruction errors over mesh sizes
    Table2(Flags),
    /// OLS reconstruction errors over noise levels
    Table3(Flags),
    /// Reconstruction without elliptic regularization (eps = 0)
    Failure(Flags),
    /// First-order derivative limit along a schedule
    ProbeFcd(Flags),
    /// Second-order derivative limit along a schedule
    ProbeScd(Flags),
    /// Finite-difference checks of gradients and Hessians
    CheckGradients(Flags),
}

#[derive(Args)]
struct Flags {
    /// mesh sizes, comma separated
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// data noise levels, comma separated
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// ols or mols
    #[arg(long)]
    objective: Option<String>,
    /// neumann or coercive
    #[arg(long)]
    form: Option<String>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value file; its settings override the flags
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build(experiment: Experiment, f: Flags) -> anyhow::Result<ExperimentConfig> {
    let mut c = ExperimentConfig::defaults(experiment);
    if let Some(v) = f.n {
        c.sizes = parse_list(&v)?;
    }
    if let Some(v) = f.kappa {
        c.kappa = v;
    }
    if let Some(v) = f.eps {
        c.eps = v;
    }
    if let Some(v) = f.tau {
        c.tau = v;
    }
    if let Some(v) = f.delta {
        c.deltas = parse_list(&v)?;
    }
    if let Some(v) = f.seed {
        c.seed = v;
    }
    if let Some(v) = f.objective {
        c.objective = parse_objective(&v)?;
    }
    if let Some(v) = f.form {
        c.form = parse_form(&v)?;
    }
    if let Some(v) = f.out {
        c.out = v;
    }
    if let Some(path) = f.config {
        c.apply_file(&path)?;
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, flags) = match cli.command {
        Command::Table1(f) => (Experiment::Table1, f),
        Command::Table2(f) => (Experiment::Table2, f),
        Command::Table3(f) => (Experiment::Table3, f),
        Command::Failure(f) => (Experiment::Failure, f),
        Command::ProbeFcd(f) => (Experiment::ProbeFcd, f),
        Command::ProbeScd(f) => (Experiment::ProbeScd, f),
        Command::CheckGradients(f) => (Experiment::CheckGradients, f),
    };
    let outcome = build(experiment, flags).and_then(|cfg| coeffid_cli::run(&cfg));
    match outcome {
        Ok((code, path)) => {
            println!("{}", path.display());
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
