//! Acceptance suite: one test per criterion, each printing a pass
//! line (run with `--nocapture` to see them). Tolerances are pinned
//! in the asserts.

use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delvar_core::descent::{minimize, InnerOptions, Objective};
use delvar_core::grid::build_grid;
use delvar_core::lagrangian::{QuadraticCostSpec, QuadraticLagrangian};
use delvar_core::oracle::{fd_gradient, integrate_mos, lq_direct_solve};
use delvar_core::penalty::{solve_control_problem, ControlProblem, PenaltyConfig, PenaltyReport};
use delvar_core::rational::{parse_rat, Rat};
use delvar_core::trajectory::{ControlPath, HistorySpec, InitMode, PolyPiece, Trajectory};
use delvar_core::variational::{el_residual, VariationalObjective, VariationalProblem};

use delvar_cli::problem::{
    CostFile, DynamicsFile, HistoryFile, InnerFile, LagrangianFile, MeshFile, PenaltyFile,
    PieceFile, ProblemFile, ProblemKind, RatValue, SlotWeights,
};
use delvar_cli::{parse_problem_str, serialize_problem};

fn r(s: &str) -> Rat {
    parse_rat(s).unwrap()
}

fn random_symmetric(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let mut w = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..=a {
            let v = rng.gen_range(-scale..scale);
            w[a * dim + b] = v;
            w[b * dim + a] = v;
        }
    }
    w
}

fn random_history(rng: &mut ChaCha8Rng, tau1: Rat, tau2: Rat, n: usize) -> HistorySpec {
    let cubic = |rng: &mut ChaCha8Rng, a: Rat, b: Rat| PolyPiece {
        start: a,
        end: b,
        coeffs: (0..n)
            .map(|_| (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect(),
    };
    let theta1 = vec![cubic(rng, -tau1, -tau2)];
    let theta2 = vec![cubic(rng, -tau2, Rat::from_integer(0))];
    HistorySpec::new(theta1, theta2, n).unwrap()
}

/// Criterion 1: on ten random delayed quadratic problems with about a
/// hundred main nodes, the analytic gradient matches central finite
/// differences coordinate by coordinate.
#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r("0.01")).unwrap());
    assert_eq!(grid.n_main(), 101);
    for case in 0..10 {
        let n = 1 + case % 3;
        let dim = 4 * n;
        let w = random_symmetric(&mut rng, dim, 0.3);
        let lin: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let lagrangian = Arc::new(QuadraticLagrangian::new(n, w, lin, 0.0).unwrap());
        let history = random_history(&mut rng, grid.tau1(), grid.tau2(), n);
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prob =
            VariationalProblem::new(grid.clone(), lagrangian, history.clone(), target.clone())
                .unwrap();

        let traj = Trajectory::init(grid.clone(), &history, &target, InitMode::Linear).unwrap();
        let mut point = vec![0.0; traj.free_len()];
        traj.read_free(&mut point);
        for v in &mut point {
            *v += rng.gen_range(-0.5..0.5);
        }

        let mut obj = VariationalObjective::new(prob, traj);
        let mut analytic = vec![0.0; point.len()];
        obj.gradient_into(&point, &mut analytic).unwrap();
        let fd = fd_gradient(&mut obj, &point, 1e-6).unwrap();
        let scale = fd.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for (k, (a, f)) in analytic.iter().zip(&fd).enumerate() {
            let denom = f.abs().max(1e-3 * scale);
            let rel = (a - f).abs() / denom;
            assert!(
                rel <= 1e-5,
                "case {case} coordinate {k}: analytic {a} vs fd {f} (rel {rel:.3e})"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("criterion 1 (gradient correctness, 10 random problems): PASS in {elapsed:?}");
}

/// Criterion 2: with the delays present in the grid but absent from
/// the integrand, descent recovers the straight line and the residual
/// checker sees nothing.
#[test]
fn criterion_2_classical_reduction() {
    let started = Instant::now();
    let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r("0.025")).unwrap());
    let history = HistorySpec::constant(grid.tau1(), grid.tau2(), &[0.0]);
    let prob = VariationalProblem::new(
        grid.clone(),
        Arc::new(QuadraticLagrangian::diagonal(1, [0.0, 0.0, 1.0, 0.0])),
        history.clone(),
        vec![1.0],
    )
    .unwrap();
    let traj = Trajectory::init(grid.clone(), &history, &[1.0], InitMode::Zero).unwrap();
    let mut init = vec![0.0; traj.free_len()];
    traj.read_free(&mut init);
    let opts = InnerOptions {
        grad_tol: 1e-9,
        bb_warm_start: true,
        ..InnerOptions::default()
    };
    let mut obj = VariationalObjective::new(prob.clone(), traj.clone());
    let (x, report) = minimize(&mut obj, &init, &opts).unwrap();
    assert!(report.converged, "inner solve did not converge");

    let mut solved = traj;
    solved.write_free(&x);
    let mut max_err = 0.0f64;
    for i in 1..grid.n_main() - 1 {
        let v = solved.value(grid.global_of_main(i))[0];
        max_err = max_err.max((v - grid.main_time_f64(i)).abs());
    }
    assert!(max_err <= 1e-6, "max node error {max_err:.3e}");

    let residual = el_residual(&prob, &solved).unwrap();
    for (k, norm) in residual.norms().iter().enumerate() {
        assert!(*norm <= 1e-8, "regime {} norm {norm:.3e}", k + 1);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 2 (classical reduction, node error {max_err:.2e}, norms {:?}): PASS in {elapsed:?}",
        residual.norms()
    );
}

/// Criterion 3: on the delayed quadratic instance, halving the mesh
/// shrinks each regime's residual norm by at least a quarter, and the
/// regimes split exactly at horizon - tau1 and horizon - tau2.
#[test]
fn criterion_3_first_order_consistency() {
    let started = Instant::now();
    let mut norms = Vec::new();
    for h in ["0.025", "0.0125"] {
        let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r(h)).unwrap());
        let history = HistorySpec::constant(grid.tau1(), grid.tau2(), &[1.0]);
        let prob = VariationalProblem::new(
            grid.clone(),
            Arc::new(QuadraticLagrangian::diagonal(1, [1.0, 1.0, 1.0, 1.0])),
            history.clone(),
            vec![0.0],
        )
        .unwrap();
        let traj = Trajectory::init(grid.clone(), &history, &[0.0], InitMode::Linear).unwrap();
        let mut init = vec![0.0; traj.free_len()];
        traj.read_free(&mut init);
        let opts = InnerOptions {
            grad_tol: 1e-7,
            bb_warm_start: true,
            ..InnerOptions::default()
        };
        let mut obj = VariationalObjective::new(prob.clone(), traj.clone());
        let (x, report) = minimize(&mut obj, &init, &opts).unwrap();
        assert!(report.converged, "inner solve did not converge at h = {h}");
        let mut solved = traj;
        solved.write_free(&x);
        let residual = el_residual(&prob, &solved).unwrap();

        // Partition boundaries sit exactly on the advertised nodes.
        let t_end_1 = grid.node(grid.global_of_main(residual.regimes[0].last_main));
        let t_end_2 = grid.node(grid.global_of_main(residual.regimes[1].last_main));
        assert_eq!(t_end_1, grid.horizon() - grid.tau1());
        assert_eq!(t_end_2, grid.horizon() - grid.tau2());
        assert_eq!(residual.regimes[1].first_main, residual.regimes[0].last_main + 1);
        assert_eq!(residual.regimes[2].first_main, residual.regimes[1].last_main + 1);
        assert_eq!(residual.regimes[2].last_main, grid.n_main() - 1);

        norms.push(residual.norms());
    }
    for k in 0..3 {
        let (coarse, fine) = (norms[0][k], norms[1][k]);
        let degenerate = coarse <= 1e-12 && fine <= 1e-12;
        assert!(
            degenerate || fine / coarse <= 0.75,
            "regime {} ratio {:.3} (coarse {coarse:.3e}, fine {fine:.3e})",
            k + 1,
            fine / coarse
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 3 (first-order consistency, ratios {:.2}/{:.2}/{:.2}): PASS in {elapsed:?}",
        norms[1][0] / norms[0][0],
        norms[1][1] / norms[0][1],
        norms[1][2] / norms[0][2]
    );
}

struct LqRun {
    prob: ControlProblem,
    quad: QuadraticCostSpec,
    report: PenaltyReport,
    elapsed: std::time::Duration,
}

/// The shared LQ instance: scalar dynamics rate = -state_lag + control
/// over two time units with unit history and zero target.
fn lq_run() -> &'static LqRun {
    static RUN: OnceLock<LqRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let grid = Arc::new(build_grid(r("2"), r("0.5"), r("0.25"), r("0.0625")).unwrap());
        let history = HistorySpec::constant(grid.tau1(), grid.tau2(), &[1.0]);
        let quad = QuadraticCostSpec::diagonal(1, 1.0, 1.0, 1.0, 1);
        let prob = ControlProblem::new(
            grid,
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::identity(1, 1),
            Arc::new(quad.clone()),
            history,
            vec![0.0],
        )
        .unwrap();
        let cfg = PenaltyConfig {
            c_start: 10.0,
            growth: 10.0,
            stages: 4,
            // Keep all four stages running; convergence is judged in
            // the asserts, not by early stopping.
            dyn_residual_tol: 1e-15,
            inner: InnerOptions {
                // Tight enough for a stationarity gap below the 1e-4
                // bound with margin, loose enough that the stiffest
                // stage (weight 1e4) still converges in double
                // precision.
                grad_tol: 5e-5,
                max_iters: 200_000,
                bb_warm_start: true,
                ..InnerOptions::default()
            },
        };
        let started = Instant::now();
        let report = solve_control_problem(&prob, &cfg).unwrap();
        let elapsed = started.elapsed();
        LqRun {
            prob,
            quad,
            report,
            elapsed,
        }
    })
}

/// Criterion 4: the penalty residual falls strictly across the stages
/// to at most 1e-3, and the final cost lands within one percent of the
/// direct transcription optimum.
#[test]
fn criterion_4_penalty_convergence() {
    let run = lq_run();
    let stages = &run.report.stages;
    assert_eq!(stages.len(), 4, "all four stages must run");
    for (k, pair) in stages.windows(2).enumerate() {
        assert!(
            pair[1].dyn_residual_norm < pair[0].dyn_residual_norm,
            "stage {} residual {:.3e} did not drop below {:.3e}",
            k + 1,
            pair[1].dyn_residual_norm,
            pair[0].dyn_residual_norm
        );
    }
    for (k, stage) in stages.iter().enumerate() {
        assert!(stage.inner.converged, "inner stage {k} must converge");
    }
    let last = stages.last().unwrap();
    assert!(
        last.dyn_residual_norm <= 1e-3,
        "final residual {:.3e}",
        last.dyn_residual_norm
    );

    let oracle = lq_direct_solve(&run.prob, &run.quad).unwrap();
    let diff = (last.cost_value - oracle.objective).abs();
    assert!(
        diff <= 0.01 * oracle.objective.abs(),
        "cost {:.6e} vs oracle {:.6e}",
        last.cost_value,
        oracle.objective
    );
    assert!(run.elapsed.as_secs_f64() < 60.0, "took {:?}", run.elapsed);
    println!(
        "criterion 4 (penalty convergence, residuals {:?}, cost gap {:.2e} rel): PASS in {:?}",
        stages
            .iter()
            .map(|s| format!("{:.2e}", s.dyn_residual_norm))
            .collect::<Vec<_>>(),
        diff / oracle.objective.abs(),
        run.elapsed
    );
}

/// Criterion 5: at every inner-converged stage the control
/// stationarity identity holds to 1e-4 and the residual sup norm never
/// grows tenfold over stage 0.
#[test]
fn criterion_5_stationarity_diagnostics() {
    let run = lq_run();
    let stages = &run.report.stages;
    let base = stages[0].defect_sup_norm;
    for (k, stage) in stages.iter().enumerate() {
        assert!(stage.inner.converged, "stage {k} inner solve converged");
        assert!(
            stage.stationarity_gap <= 1e-4,
            "stage {k} gap {:.3e}",
            stage.stationarity_gap
        );
        assert!(
            stage.defect_sup_norm < 10.0 * base,
            "stage {k} sup norm {:.3e} vs stage-0 {base:.3e}",
            stage.defect_sup_norm
        );
        assert!(!stage.bound_flag, "stage {k} raised the bound flag");
    }
    println!(
        "criterion 5 (stationarity diagnostics, gaps {:?}): PASS",
        stages
            .iter()
            .map(|s| format!("{:.2e}", s.stationarity_gap))
            .collect::<Vec<_>>()
    );
}

/// Criterion 6: the integrator reproduces the symbolic continuation
/// (exact over the first two delay spans, second order beyond), and
/// the direct solve satisfies its own optimality system to 1e-8 on
/// twenty random instances.
#[test]
fn criterion_6_oracle_self_consistency() {
    let started = Instant::now();
    // Order study against the symbolic method-of-steps solution.
    let a = 0.8;
    let tau1 = 0.5;
    let exact = |t: f64| -> f64 {
        if t <= tau1 {
            1.0 + a * t
        } else if t <= 2.0 * tau1 {
            let s = t - tau1;
            1.0 + a * tau1 + a * s + a * a * s * s / 2.0
        } else {
            let s = t - 2.0 * tau1;
            let x2 = 1.0 + 2.0 * a * tau1 + a * a * tau1 * tau1 / 2.0;
            x2 + a * (1.0 + a * tau1) * s + a * a * s * s / 2.0 + a * a * a * s * s * s / 6.0
        }
    };
    let mut errs = Vec::new();
    for h in ["0.125", "0.0625"] {
        let grid = Arc::new(build_grid(r("1.5"), r("0.5"), r("0.25"), r(h)).unwrap());
        let history = HistorySpec::constant(grid.tau1(), grid.tau2(), &[1.0]);
        let u = ControlPath::zeros(grid.clone(), 1);
        let path = integrate_mos(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::zeros(1, 1),
            &u,
            &history,
            &grid,
        )
        .unwrap();
        let mut err_two_spans = 0.0f64;
        let mut err = 0.0f64;
        for i in 0..grid.n_main() {
            let t = grid.main_time_f64(i);
            let e = (path.value(grid.global_of_main(i))[0] - exact(t)).abs();
            err = err.max(e);
            if t <= 2.0 * tau1 {
                err_two_spans = err_two_spans.max(e);
            }
        }
        assert!(
            err_two_spans <= 1e-12,
            "error over the first two spans {err_two_spans:.3e}"
        );
        errs.push(err);
    }
    let ratio = errs[0] / errs[1];
    assert!(ratio >= 3.0, "order-study ratio {ratio:.2} (errors {errs:?})");

    // KKT self-check by substitution on random feasible instances.
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut max_residual = 0.0f64;
    for case in 0..20 {
        let n = 1 + case % 3;
        let m = 1 + case % 2;
        let h = ["0.05", "0.025"][case % 2];
        let grid = Arc::new(build_grid(r("1"), r("0.2"), r("0.1"), r(h)).unwrap());
        assert!(grid.n_main() <= 200);
        let rand_psd = |rng: &mut ChaCha8Rng, d: usize, shift: f64| {
            let f = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            &f * f.transpose() + DMatrix::identity(d, d) * shift
        };
        let quad = QuadraticCostSpec {
            q: rand_psd(&mut rng, n, 0.0),
            s: rand_psd(&mut rng, n, 0.0),
            r: rand_psd(&mut rng, m, 0.5),
            q_lin: Some(DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5))),
            s_lin: None,
            r_lin: Some(DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5))),
            rho: 0.0,
        };
        let history = random_history(&mut rng, grid.tau1(), grid.tau2(), n);
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a_mat = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b_mat = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let prob = ControlProblem::new(
            grid,
            a_mat,
            b_mat,
            Arc::new(quad.clone()),
            history,
            target,
        )
        .unwrap();
        let sol = lq_direct_solve(&prob, &quad).unwrap();
        max_residual = max_residual.max(sol.residual);
        assert!(sol.residual <= 1e-8, "case {case}: residual {:.3e}", sol.residual);
    }
    let elapsed = started.elapsed();
    println!(
        "criterion 6 (oracle self-consistency, order ratio {ratio:.2}, max KKT residual {max_residual:.2e}): PASS in {elapsed:?}"
    );
}

/// Criterion 7: pins survive every solve bit for bit.
#[test]
fn criterion_7_feasibility_pins() {
    // Control side: the cached LQ run.
    let run = lq_run();
    let traj = &run.report.final_trajectory;
    let grid = traj.grid();
    let mut expect = vec![0.0];
    for j in 0..=grid.n_history() {
        run.prob.history.sample(grid.node(j), &mut expect).unwrap();
        assert_eq!(
            traj.value(j)[0].to_bits(),
            expect[0].to_bits(),
            "history node {j}"
        );
    }
    assert_eq!(traj.value(grid.last())[0].to_bits(), run.prob.target[0].to_bits());
    assert_eq!(run.report.final_control.value(0)[0].to_bits(), 0.0f64.to_bits());

    // Variational side: a fresh delayed quadratic solve.
    let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r("0.05")).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let history = random_history(&mut rng, grid.tau1(), grid.tau2(), 1);
    let target = vec![0.25];
    let prob = VariationalProblem::new(
        grid.clone(),
        Arc::new(QuadraticLagrangian::diagonal(1, [1.0, 1.0, 1.0, 1.0])),
        history.clone(),
        target.clone(),
    )
    .unwrap();
    let traj = Trajectory::init(grid.clone(), &history, &target, InitMode::Linear).unwrap();
    let mut init = vec![0.0; traj.free_len()];
    traj.read_free(&mut init);
    let opts = InnerOptions {
        bb_warm_start: true,
        ..InnerOptions::default()
    };
    let mut obj = VariationalObjective::new(prob, traj.clone());
    let (x, _) = minimize(&mut obj, &init, &opts).unwrap();
    let mut solved = traj.clone();
    solved.write_free(&x);
    for j in 0..=grid.n_history() {
        history.sample(grid.node(j), &mut expect).unwrap();
        assert_eq!(
            solved.value(j)[0].to_bits(),
            expect[0].to_bits(),
            "history node {j}"
        );
    }
    assert_eq!(solved.value(grid.last())[0].to_bits(), target[0].to_bits());
    println!("criterion 7 (feasibility pins bitwise): PASS");
}

fn random_problem_file(rng: &mut ChaCha8Rng) -> ProblemFile {
    let den = *[4i64, 8, 10, 12].iter().nth(rng.gen_range(0..4)).unwrap();
    let q2 = rng.gen_range(1..3);
    let q1 = q2 + rng.gen_range(1..3);
    let qt = q1 + rng.gen_range(1..2 * den);
    let tau2 = Rat::new(q2, den);
    let tau1 = Rat::new(q1, den);
    let horizon = Rat::new(qt, den);
    let n = rng.gen_range(1..=2usize);
    let m = rng.gen_range(1..=2usize);

    let kind = if rng.gen_bool(0.5) {
        ProblemKind::Control
    } else {
        ProblemKind::Variational
    };

    let history = if rng.gen_bool(0.5) {
        HistoryFile {
            constant: Some((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            theta1: None,
            theta2: None,
        }
    } else {
        let piece = |rng: &mut ChaCha8Rng, a: Rat, b: Rat| PieceFile {
            start: RatValue(a),
            end: RatValue(b),
            coeffs: (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        };
        HistoryFile {
            constant: None,
            theta1: Some(vec![piece(rng, -tau1, -tau2)]),
            theta2: Some(vec![piece(rng, -tau2, Rat::from_integer(0))]),
        }
    };

    let sym_rows = |rng: &mut ChaCha8Rng, d: usize, shift: f64| -> Vec<Vec<f64>> {
        let f = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let m = &f * f.transpose() + DMatrix::identity(d, d) * shift;
        (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect()
    };

    let (dynamics, cost, lagrangian, control_dim) = match kind {
        ProblemKind::Control => (
            Some(DynamicsFile {
                a: (0..n)
                    .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
                b: (0..n)
                    .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            }),
            Some(CostFile {
                q: sym_rows(rng, n, 0.0),
                s: sym_rows(rng, n, 0.0),
                r: sym_rows(rng, m, 0.2),
                q_lin: rng.gen_bool(0.3).then(|| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()),
                s_lin: None,
                r_lin: None,
                rho: 0.0,
            }),
            None,
            m,
        ),
        ProblemKind::Variational => (
            None,
            None,
            Some(LagrangianFile {
                name: "quadratic".into(),
                full: None,
                weights: Some(SlotWeights {
                    state: Some(sym_rows(rng, n, 0.1)),
                    state_lag: rng.gen_bool(0.5).then(|| sym_rows(rng, n, 0.0)),
                    rate: Some(sym_rows(rng, n, 0.1)),
                    rate_lag: rng.gen_bool(0.5).then(|| sym_rows(rng, n, 0.0)),
                }),
                lin: None,
            }),
            0,
        ),
    };

    ProblemFile {
        kind,
        state_dim: n,
        control_dim,
        horizon: RatValue(horizon),
        tau1: RatValue(tau1),
        tau2: RatValue(tau2),
        history,
        alpha: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        dynamics,
        cost,
        lagrangian,
        mesh: MeshFile {
            h_target: RatValue(Rat::new(1, den * rng.gen_range(1..4))),
        },
        penalty: PenaltyFile {
            c_start: rng.gen_range(1.0..20.0),
            growth: rng.gen_range(2.0..12.0),
            stages: rng.gen_range(1..5),
            dyn_residual_tol: 1e-3,
            inner: InnerFile::default(),
        },
        seed: rng.gen(),
    }
}

/// Criterion 8: parse -> serialize -> parse is a fixpoint on a hundred
/// generated files, and identical invocations produce byte-identical
/// reports apart from the timestamp.
#[test]
fn criterion_8_cli_round_trip_and_determinism() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..100 {
        let file = random_problem_file(&mut rng);
        let text = serialize_problem(&file);
        let parsed = parse_problem_str(&text)
            .unwrap_or_else(|e| panic!("case {case} failed to parse: {e}\n{text}"));
        assert_eq!(parsed, file, "case {case} round trip changed the structure");
        let text2 = serialize_problem(&parsed);
        assert_eq!(text, text2, "case {case} serialization is not a fixpoint");
    }

    // Byte-identical reports, timestamp aside.
    let dir = tempfile::tempdir().unwrap();
    let problems_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems");
    let strip = |text: &str| -> String {
        text.lines()
            .filter(|l| !l.contains("timestamp_unix_s"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    for (name, extra) in [
        ("zero_control.json", &["--stages", "2"][..]),
        ("classical_line.json", &[][..]),
    ] {
        let mut outputs = Vec::new();
        for pass in 0..2 {
            let report = dir.path().join(format!("{name}.{pass}.json"));
            let traj = dir.path().join(format!("{name}.{pass}.csv"));
            let out = std::process::Command::new(env!("CARGO_BIN_EXE_delvar"))
                .arg("solve")
                .arg(problems_dir.join(name))
                .args(["--seed", "42"])
                .args(extra)
                .arg("--report")
                .arg(&report)
                .arg("--trajectory")
                .arg(&traj)
                .output()
                .expect("binary runs");
            let code = out.status.code().unwrap();
            assert!(
                code == 0 || code == 2,
                "{name} pass {pass}: exit {code}, stderr {}",
                String::from_utf8_lossy(&out.stderr)
            );
            outputs.push((
                std::fs::read_to_string(&report).unwrap(),
                std::fs::read(&traj).unwrap(),
            ));
        }
        assert_eq!(strip(&outputs[0].0), strip(&outputs[1].0), "{name} report differs");
        assert_ne!(strip(&outputs[0].0), "", "{name} report is empty");
        assert_eq!(outputs[0].1, outputs[1].1, "{name} trajectory differs");
    }
    let elapsed = started.elapsed();
    println!("criterion 8 (round trip and determinism): PASS in {elapsed:?}");
}
