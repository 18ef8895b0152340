//! Library surface of the command-line front end: problem-file
//! parsing, validation and the subcommand runners, kept callable so
//! tests can exercise them in-process.

pub mod problem;
pub mod report;
pub mod run;

pub use problem::{
    parse_problem_file, parse_problem_str, serialize_problem, CliError, ProblemFile, ProblemKind,
};
pub use run::{run_check, run_oracle, run_residual, run_solve, Flags};
