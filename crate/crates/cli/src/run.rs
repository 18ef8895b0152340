//! Subcommand implementations. Each returns the process exit code:
//! 0 for success/converged, 2 for a finished-but-not-converged run or
//! a failed check, with errors bubbling up for exit code 1.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use delvar_core::descent::{minimize, Objective};
use delvar_core::oracle::{fd_gradient, lq_direct_solve};
use delvar_core::penalty::{solve_control_problem, ControlObjective};
use delvar_core::rational::{parse_rat, to_f64};
use delvar_core::trajectory::{ControlPath, InitMode, Trajectory};
use delvar_core::variational::{el_residual, functional_value, VariationalObjective};

use crate::problem::{parse_problem_file, CliError, ProblemFile, ProblemKind};
use crate::report;

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Default, Clone)]
pub struct Flags {
    pub mesh: Option<String>,
    pub penalty_start: Option<f64>,
    pub penalty_growth: Option<f64>,
    pub stages: Option<usize>,
    pub inner_tol: Option<f64>,
    pub outer_tol: Option<f64>,
    pub report: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub residual_csv: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Flags {
    fn mesh_override(&self) -> Result<Option<delvar_core::Rat>, CliError> {
        self.mesh
            .as_deref()
            .map(|s| parse_rat(s).map_err(CliError::Core))
            .transpose()
    }

    fn seed(&self, file: &ProblemFile) -> u64 {
        self.seed.unwrap_or(file.seed)
    }
}

fn apply_penalty_overrides(file: &ProblemFile, flags: &Flags) -> delvar_core::PenaltyConfig {
    let mut cfg = file.penalty_config();
    if let Some(c) = flags.penalty_start {
        cfg.c_start = c;
    }
    if let Some(g) = flags.penalty_growth {
        cfg.growth = g;
    }
    if let Some(s) = flags.stages {
        cfg.stages = s;
    }
    if let Some(t) = flags.inner_tol {
        cfg.inner.grad_tol = t;
    }
    if let Some(t) = flags.outer_tol {
        cfg.dyn_residual_tol = t;
    }
    cfg
}

fn write_report(flags: &Flags, mut value: serde_json::Value) -> Result<(), CliError> {
    report::add_timestamp(&mut value);
    if let Some(path) = &flags.report {
        let mut w = BufWriter::new(File::create(path)?);
        report::write_json(&value, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn write_trajectory_csv(
    flags: &Flags,
    traj: &Trajectory,
    control: Option<&ControlPath>,
) -> Result<(), CliError> {
    if let Some(path) = &flags.trajectory {
        let mut w = BufWriter::new(File::create(path)?);
        traj.write_csv(control, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// `solve`: penalty loop for control files, direct descent for
/// variational files.
pub fn run_solve(path: &Path, flags: &Flags) -> Result<i32, CliError> {
    let file = parse_problem_file(path)?;
    let grid = file.build_grid(flags.mesh_override()?)?;
    match file.kind {
        ProblemKind::Control => {
            let (prob, _) = file.build_control(grid.clone())?;
            let cfg = apply_penalty_overrides(&file, flags);
            let solution = solve_control_problem(&prob, &cfg)?;
            let last = solution.stages.last().expect("at least one stage");
            println!(
                "solve: kind=control converged={} stages={} cost={:.6e} dyn_residual={:.6e}",
                solution.converged,
                solution.stages.len(),
                last.cost_value,
                last.dyn_residual_norm
            );
            let value = json!({
                "kind": "control",
                "seed": flags.seed(&file),
                "mesh_h": report_rat(grid.step()),
                "n_main": grid.n_main(),
                "report": report::to_value(&solution)?,
            });
            write_report(flags, value)?;
            write_trajectory_csv(flags, &solution.final_trajectory, Some(&solution.final_control))?;
            Ok(if solution.converged { 0 } else { 2 })
        }
        ProblemKind::Variational => {
            let prob = file.build_variational(grid.clone())?;
            let traj = Trajectory::init(grid.clone(), &prob.history, &prob.target, InitMode::Linear)?;
            let mut init = vec![0.0; traj.free_len()];
            traj.read_free(&mut init);
            let mut opts = file.penalty.inner.to_options();
            if let Some(t) = flags.inner_tol {
                opts.grad_tol = t;
            }
            let mut obj = VariationalObjective::new(prob.clone(), traj.clone());
            let (x, inner) = minimize(&mut obj, &init, &opts)?;
            let mut solved = traj;
            solved.write_free(&x);
            let value_j = functional_value(&prob, &solved)?;
            let residual = el_residual(&prob, &solved)?;
            println!(
                "solve: kind=variational converged={} iterations={} value={:.6e} el_norms=[{:.3e}, {:.3e}, {:.3e}]",
                inner.converged,
                inner.iterations,
                value_j,
                residual.norms()[0],
                residual.norms()[1],
                residual.norms()[2]
            );
            let value = json!({
                "kind": "variational",
                "seed": flags.seed(&file),
                "mesh_h": report_rat(grid.step()),
                "n_main": grid.n_main(),
                "functional_value": value_j,
                "inner": report::to_value(&inner)?,
                "el_residual": {
                    "norms": residual.norms(),
                    "regimes": residual
                        .regimes
                        .iter()
                        .map(|r| json!({
                            "first_main": r.first_main,
                            "last_main": r.last_main,
                            "norm": r.norm,
                        }))
                        .collect::<Vec<_>>(),
                    "boundary": report::to_value(&residual.boundary)?,
                    "warnings": residual.warnings,
                },
                "analytic_partials": prob.lagrangian.partials_exact(),
            });
            write_report(flags, value)?;
            write_trajectory_csv(flags, &solved, None)?;
            Ok(if inner.converged { 0 } else { 2 })
        }
    }
}

fn report_rat(r: delvar_core::Rat) -> String {
    delvar_core::format_rat(r)
}

/// `check`: validate the file and compare the analytic gradient of the
/// discretized objective against central finite differences at a
/// seeded random feasible point.
pub fn run_check(path: &Path, flags: &Flags) -> Result<i32, CliError> {
    let file = parse_problem_file(path)?;
    let grid = file.build_grid(flags.mesh_override()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(flags.seed(&file));

    let (max_rel, dim) = match file.kind {
        ProblemKind::Variational => {
            let prob = file.build_variational(grid.clone())?;
            let traj = Trajectory::init(grid.clone(), &prob.history, &prob.target, InitMode::Linear)?;
            let mut point = vec![0.0; traj.free_len()];
            traj.read_free(&mut point);
            for v in &mut point {
                *v += rng.gen_range(-0.3..0.3);
            }
            let mut obj = VariationalObjective::new(prob, traj);
            gradient_check(&mut obj, &point)?
        }
        ProblemKind::Control => {
            let (prob, _) = file.build_control(grid.clone())?;
            let traj = Trajectory::init(grid.clone(), &prob.history, &prob.target, InitMode::Linear)?;
            let u = ControlPath::zeros(grid.clone(), prob.control_dim());
            let cfg = apply_penalty_overrides(&file, flags);
            let mut point = ControlObjective::pack(&traj, &u);
            for v in &mut point {
                *v += rng.gen_range(-0.3..0.3);
            }
            let mut obj = ControlObjective::new(&prob, traj, u, cfg.c_start)?;
            gradient_check(&mut obj, &point)?
        }
    };
    let passed = max_rel <= 1e-5;
    println!(
        "check: {} max_rel_error={max_rel:.3e} over {dim} coordinates (eps 1e-6)",
        if passed { "ok" } else { "FAILED" }
    );
    let value = json!({
        "kind": "check",
        "seed": flags.seed(&file),
        "dim": dim,
        "max_rel_error": max_rel,
        "passed": passed,
    });
    write_report(flags, value)?;
    Ok(if passed { 0 } else { 2 })
}

fn gradient_check(obj: &mut dyn Objective, point: &[f64]) -> Result<(f64, usize), CliError> {
    let dim = point.len();
    let mut analytic = vec![0.0; dim];
    obj.gradient_into(point, &mut analytic)?;
    let fd = fd_gradient(obj, point, 1e-6)?;
    let scale = fd.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut max_rel = 0.0f64;
    for (a, f) in analytic.iter().zip(&fd) {
        let denom = f.abs().max(1e-3 * scale).max(1e-12);
        max_rel = max_rel.max((a - f).abs() / denom);
    }
    Ok((max_rel, dim))
}

/// `oracle`: direct KKT solve of the quadratic transcription.
pub fn run_oracle(path: &Path, flags: &Flags) -> Result<i32, CliError> {
    let file = parse_problem_file(path)?;
    if file.kind != ProblemKind::Control {
        return Err(CliError::Usage(
            "the oracle subcommand needs a control problem file".into(),
        ));
    }
    let grid = file.build_grid(flags.mesh_override()?)?;
    let (prob, quad) = file.build_control(grid.clone())?;
    let solution = lq_direct_solve(&prob, &quad)?;
    println!(
        "oracle: objective={:.12e} kkt_residual={:.3e}",
        solution.objective, solution.residual
    );
    let value = json!({
        "kind": "oracle",
        "mesh_h": report_rat(grid.step()),
        "n_main": grid.n_main(),
        "objective": solution.objective,
        "kkt_residual": solution.residual,
        "multipliers": solution.multipliers,
    });
    write_report(flags, value)?;
    write_trajectory_csv(flags, &solution.trajectory, Some(&solution.control))?;
    Ok(0)
}

/// `residual`: first-order residual of a supplied trajectory CSV.
pub fn run_residual(path: &Path, flags: &Flags) -> Result<i32, CliError> {
    let file = parse_problem_file(path)?;
    if file.kind != ProblemKind::Variational {
        return Err(CliError::Usage(
            "the residual subcommand needs a variational problem file".into(),
        ));
    }
    let csv_path = flags.trajectory.as_ref().ok_or_else(|| {
        CliError::Usage("the residual subcommand needs --trajectory <CSV> as input".into())
    })?;
    let grid = file.build_grid(flags.mesh_override()?)?;
    let prob = file.build_variational(grid.clone())?;
    let traj = read_trajectory_csv(csv_path, &grid, file.state_dim)?;
    let residual = el_residual(&prob, &traj)?;
    println!(
        "residual: norms=[{:.6e}, {:.6e}, {:.6e}] warnings={}",
        residual.norms()[0],
        residual.norms()[1],
        residual.norms()[2],
        residual.warnings.len()
    );
    let value = json!({
        "kind": "residual",
        "mesh_h": report_rat(grid.step()),
        "el_residual": report::to_value(&residual)?,
        "functional_value": functional_value(&prob, &traj)?,
    });
    write_report(flags, value)?;
    if let Some(path) = &flags.residual_csv {
        let mut w = BufWriter::new(File::create(path)?);
        residual.write_csv(&grid, &mut w)?;
        w.flush()?;
    }
    Ok(0)
}

fn read_trajectory_csv(
    path: &Path,
    grid: &std::sync::Arc<delvar_core::DelayGrid>,
    state_dim: usize,
) -> Result<Trajectory, CliError> {
    let reader = BufReader::new(File::open(path)?);
    let mut values = Vec::with_capacity(grid.n_total() * state_dim);
    let mut row = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let t: f64 = cells
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| CliError::Parse(format!("line {}: bad time cell", lineno + 1)))?;
        if row >= grid.n_total() {
            return Err(CliError::Parse(format!(
                "trajectory CSV has more than {} data rows",
                grid.n_total()
            )));
        }
        let expect = to_f64(grid.node(row));
        if (t - expect).abs() > 1e-9 * expect.abs().max(1.0) {
            return Err(CliError::Parse(format!(
                "line {}: time {t} does not match grid node {expect}",
                lineno + 1
            )));
        }
        for d in 0..state_dim {
            let cell = cells.next().ok_or_else(|| {
                CliError::Parse(format!("line {}: missing state column {}", lineno + 1, d + 1))
            })?;
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Parse(format!("line {}: bad state cell {:?}", lineno + 1, cell))
            })?;
            values.push(v);
        }
        row += 1;
    }
    if row != grid.n_total() {
        return Err(CliError::Parse(format!(
            "trajectory CSV has {row} data rows, expected {}",
            grid.n_total()
        )));
    }
    Ok(Trajectory::from_raw_values(grid.clone(), state_dim, values)?)
}
