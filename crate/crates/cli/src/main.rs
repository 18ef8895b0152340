use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use delvar_cli::{run_check, run_oracle, run_residual, run_solve, Flags};

#[derive(Parser)]
#[command(
    name = "delvar",
    about = "Solver for variational and optimal-control problems with two time delays",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FlagArgs {
    /// Target mesh step (rational, e.g. "0.05" or "1/40").
    #[arg(long)]
    mesh: Option<String>,
    /// First penalty weight.
    #[arg(long = "penalty-start")]
    penalty_start: Option<f64>,
    /// Geometric growth factor of the penalty weights.
    #[arg(long = "penalty-growth")]
    penalty_growth: Option<f64>,
    /// Number of penalty stages.
    #[arg(long)]
    stages: Option<usize>,
    /// Inner gradient tolerance.
    #[arg(long = "inner-tol")]
    inner_tol: Option<f64>,
    /// Outer stop on the dynamics residual norm.
    #[arg(long = "outer-tol")]
    outer_tol: Option<f64>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Trajectory CSV: output path for solve/oracle, input path for
    /// residual.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Where to write the per-node residual CSV (residual subcommand).
    #[arg(long = "residual-csv")]
    residual_csv: Option<PathBuf>,
    /// Seed for the randomized pieces (overrides the problem file).
    #[arg(long)]
    seed: Option<u64>,
}

impl From<FlagArgs> for Flags {
    fn from(f: FlagArgs) -> Flags {
        Flags {
            mesh: f.mesh,
            penalty_start: f.penalty_start,
            penalty_growth: f.penalty_growth,
            stages: f.stages,
            inner_tol: f.inner_tol,
            outer_tol: f.outer_tol,
            report: f.report,
            trajectory: f.trajectory,
            residual_csv: f.residual_csv,
            seed: f.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem (penalty loop or direct descent by kind).
    Solve {
        file: PathBuf,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Validate the file and finite-difference-check the gradient.
    Check {
        file: PathBuf,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Run the direct KKT oracle on a control problem.
    Oracle {
        file: PathBuf,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// First-order residual of a supplied trajectory CSV.
    Residual {
        file: PathBuf,
        #[command(flatten)]
        flags: FlagArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve { file, flags } => run_solve(&file, &flags.into()),
        Command::Check { file, flags } => run_check(&file, &flags.into()),
        Command::Oracle { file, flags } => run_oracle(&file, &flags.into()),
        Command::Residual { file, flags } => run_residual(&file, &flags.into()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
