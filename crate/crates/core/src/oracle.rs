//! Independent ground truth: a method-of-steps integrator for the
//! delayed linear dynamics and a direct KKT solve of the discretized
//! quadratic control problem.
//!
//! The KKT oracle transcribes the dynamics with the same forward
//! differences and the same quadrature weights as the penalty path, so
//! the two attack the identical finite-dimensional problem and any
//! disagreement isolates penalty-method error. The assembly below is
//! written against the raw matrices on purpose and shares no code with
//! the integrand machinery.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::descent::Objective;
use crate::error::{Error, Result};
use crate::grid::DelayGrid;
use crate::lagrangian::QuadraticCostSpec;
use crate::penalty::ControlProblem;
use crate::trajectory::{ControlPath, HistorySpec, Trajectory};

/// Upper bound on unknowns plus constraint rows for the dense solve.
const MAX_KKT_DIM: usize = 3000;

/// Integrates `rate = A state(t - tau1) + B control` with the
/// trapezoidal rule, one node at a time.
///
/// The delayed argument always lags at least one step behind, so each
/// update only reads already-computed values (the method-of-steps
/// structure collapses to an index shift on a commensurate grid).
/// The returned trajectory carries no terminal pin.
pub fn integrate_mos(
    a_mat: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    u: &ControlPath,
    hist: &HistorySpec,
    grid: &Arc<DelayGrid>,
) -> Result<Trajectory> {
    let n = hist.state_dim();
    let m = u.control_dim();
    if a_mat.nrows() != n || a_mat.ncols() != n || b_mat.nrows() != n || b_mat.ncols() != m {
        return Err(Error::DimensionMismatch(
            "A/B shapes do not match the history and control dimensions".into(),
        ));
    }
    hist.validate_domains(grid.tau1(), grid.tau2())?;
    let h = grid.step_f64();
    let k1 = grid.k1();
    let mut values = vec![0.0; grid.n_total() * n];
    for j in 0..=grid.n_history() {
        hist.sample(grid.node(j), &mut values[j * n..(j + 1) * n])?;
    }
    // Right-hand side at main node i, reading the already-known lagged
    // state.
    let rhs = |values: &[f64], i: usize, out: &mut [f64]| {
        let lag = grid.global_of_main(i) - k1;
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc += a_mat[(r, c)] * values[lag * n + c];
            }
            for c in 0..m {
                acc += b_mat[(r, c)] * u.value(i)[c];
            }
            out[r] = acc;
        }
    };
    let mut f_lo = vec![0.0; n];
    let mut f_hi = vec![0.0; n];
    for i in 0..grid.n_main() - 1 {
        let g = grid.global_of_main(i);
        rhs(&values, i, &mut f_lo);
        rhs(&values, i + 1, &mut f_hi);
        for r in 0..n {
            values[(g + 1) * n + r] = values[g * n + r] + 0.5 * h * (f_lo[r] + f_hi[r]);
        }
    }
    Trajectory::from_raw_values(grid.clone(), n, values)
}

/// Primal/dual solution of the discretized quadratic control problem.
#[derive(Debug, Clone, Serialize)]
pub struct KktSolution {
    #[serde(skip)]
    pub trajectory: Trajectory,
    #[serde(skip)]
    pub control: ControlPath,
    /// One multiplier vector per dynamics constraint row (main nodes
    /// 0 .. n_main-2).
    pub multipliers: Vec<Vec<f64>>,
    pub objective: f64,
    /// Largest violation across the stationarity and primal equations.
    pub residual: f64,
}

/// An argument of the cost as an affine function of the decision
/// vector: a list of (column base, scalar coefficient) pairs over
/// consecutive unknown blocks, plus the pinned contribution.
struct AffineArg {
    terms: Vec<(usize, f64)>,
    base: DVector<f64>,
}

fn add_quadratic(
    h_mat: &mut DMatrix<f64>,
    g_vec: &mut DVector<f64>,
    konst: &mut f64,
    w: &DMatrix<f64>,
    lin: Option<&DVector<f64>>,
    arg: &AffineArg,
    weight: f64,
) {
    let dim = w.nrows();
    let wb = w * &arg.base;
    for &(o1, c1) in &arg.terms {
        for &(o2, c2) in &arg.terms {
            let f = 2.0 * weight * c1 * c2;
            for r in 0..dim {
                for c in 0..dim {
                    h_mat[(o1 + r, o2 + c)] += f * w[(r, c)];
                }
            }
        }
        for r in 0..dim {
            g_vec[o1 + r] += weight * (2.0 * c1 * wb[r] + c1 * lin.map_or(0.0, |l| l[r]));
        }
    }
    *konst += weight * (arg.base.dot(&wb) + lin.map_or(0.0, |l| l.dot(&arg.base)));
}

/// Solves the forward-difference transcription of the quadratic
/// control problem by a dense factorization of its optimality system.
///
/// `quad` must be the same quadratic family the problem was built
/// with; the oracle evaluates it through its own assembly.
pub fn lq_direct_solve(prob: &ControlProblem, quad: &QuadraticCostSpec) -> Result<KktSolution> {
    let grid = prob.grid.as_ref();
    let n = prob.state_dim();
    let m = prob.control_dim();
    quad.validate(n, m)?;
    let n_main = grid.n_main();
    let h = grid.step_f64();
    let k1 = grid.k1();
    let k2 = grid.k2();

    // Unknowns: interior state nodes, then controls at main nodes
    // 1 .. n_main-2. The first control is pinned to zero; the last
    // carries no quadrature weight and no constraint, so its optimum
    // is the fixed zero the descent path also keeps.
    let nx = (n_main - 2) * n;
    let nu = (n_main - 2) * m;
    let dim = nx + nu;
    let rows = (n_main - 1) * n;
    if dim + rows > MAX_KKT_DIM {
        return Err(Error::OracleTooLarge(format!(
            "{dim} unknowns + {rows} constraint rows exceed {MAX_KKT_DIM}"
        )));
    }

    // Pinned node values: history samples and the terminal target.
    let pinned = Trajectory::init(
        prob.grid.clone(),
        &prob.history,
        &prob.target,
        crate::trajectory::InitMode::Zero,
    )?;
    let x_col = |global: usize| -> Option<usize> {
        let lo = grid.n_history() + 1;
        let hi = grid.last();
        (global >= lo && global < hi).then(|| (global - lo) * n)
    };
    let u_col = |i: usize| -> Option<usize> {
        (i >= 1 && i + 1 < n_main).then(|| nx + (i - 1) * m)
    };
    let x_arg = |global: usize| -> AffineArg {
        match x_col(global) {
            Some(col) => AffineArg {
                terms: vec![(col, 1.0)],
                base: DVector::zeros(n),
            },
            None => AffineArg {
                terms: vec![],
                base: DVector::from_row_slice(pinned.value(global)),
            },
        }
    };

    let mut h_mat = DMatrix::zeros(dim, dim);
    let mut g_vec = DVector::zeros(dim);
    let mut konst = 0.0;
    for i in 0..n_main - 1 {
        let g = grid.global_of_main(i);
        // state argument
        add_quadratic(&mut h_mat, &mut g_vec, &mut konst, &quad.q, quad.q_lin.as_ref(), &x_arg(g), h);
        // lagged rate argument: forward difference at node g - k2
        let j = g - k2;
        let lo = x_arg(j);
        let hi = x_arg(j + 1);
        let mut terms = Vec::new();
        for &(col, c) in &lo.terms {
            terms.push((col, -c / h));
        }
        for &(col, c) in &hi.terms {
            terms.push((col, c / h));
        }
        let arg = AffineArg {
            terms,
            base: (hi.base - lo.base) / h,
        };
        add_quadratic(&mut h_mat, &mut g_vec, &mut konst, &quad.s, quad.s_lin.as_ref(), &arg, h);
        // control argument
        let arg = match u_col(i) {
            Some(col) => AffineArg {
                terms: vec![(col, 1.0)],
                base: DVector::zeros(m),
            },
            None => AffineArg {
                terms: vec![],
                base: DVector::zeros(m),
            },
        };
        add_quadratic(&mut h_mat, &mut g_vec, &mut konst, &quad.r, quad.r_lin.as_ref(), &arg, h);
    }

    // Dynamics rows: (x_{i+1} - x_i)/h - A x_{i-k1} - B u_i = 0 at
    // main nodes 0 .. n_main-2.
    let mut c_mat = DMatrix::zeros(rows, dim);
    let mut d_vec = DVector::zeros(rows);
    let stamp = |row: usize, global: usize, coeff: &DMatrix<f64>, c_mat: &mut DMatrix<f64>, d_vec: &mut DVector<f64>| {
        match x_col(global) {
            Some(col) => {
                for r in 0..n {
                    for c in 0..n {
                        c_mat[(row + r, col + c)] += coeff[(r, c)];
                    }
                }
            }
            None => {
                let v = pinned.value(global);
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += coeff[(r, c)] * v[c];
                    }
                    d_vec[row + r] -= acc;
                }
            }
        }
    };
    let eye = DMatrix::<f64>::identity(n, n);
    for i in 0..n_main - 1 {
        let row = i * n;
        let g = grid.global_of_main(i);
        stamp(row, g + 1, &(&eye / h), &mut c_mat, &mut d_vec);
        stamp(row, g, &(-&eye / h), &mut c_mat, &mut d_vec);
        stamp(row, g - k1, &(-&prob.a_mat), &mut c_mat, &mut d_vec);
        match u_col(i) {
            Some(col) => {
                for r in 0..n {
                    for c in 0..m {
                        c_mat[(row + r, col + c)] -= prob.b_mat[(r, c)];
                    }
                }
            }
            None => {
                // u(0) = 0 and the terminal control never enter a row.
            }
        }
    }

    // [ H  C^T ] [z]   [-g]
    // [ C   0  ] [l] = [ d]
    let total = dim + rows;
    let mut kkt = DMatrix::zeros(total, total);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(&h_mat);
    kkt.view_mut((0, dim), (dim, rows)).copy_from(&c_mat.transpose());
    kkt.view_mut((dim, 0), (rows, dim)).copy_from(&c_mat);
    let mut rhs = DVector::zeros(total);
    rhs.rows_mut(0, dim).copy_from(&(-&g_vec));
    rhs.rows_mut(dim, rows).copy_from(&d_vec);

    let solution = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularKkt("dense factorization failed".into()))?;
    let z = solution.rows(0, dim).into_owned();
    let lambda = solution.rows(dim, rows).into_owned();

    let stat = (&h_mat * &z) + &g_vec + c_mat.transpose() * &lambda;
    let prim = (&c_mat * &z) - &d_vec;
    let residual = stat.amax().max(prim.amax());
    // A factorization of a rank-deficient system can "succeed" with a
    // garbage solution; the substituted residual catches that.
    let scale = rhs.amax().max(z.amax()).max(1.0);
    if residual > 1e-6 * scale {
        return Err(Error::SingularKkt(format!(
            "optimality system residual {residual:.3e} (scale {scale:.3e}); \
             constraints are redundant or inconsistent, e.g. the target is unreachable"
        )));
    }
    let objective = 0.5 * z.dot(&(&h_mat * &z)) + g_vec.dot(&z) + konst;

    // Reassemble full paths.
    let mut values = pinned.values().to_vec();
    for global in (grid.n_history() + 1)..grid.last() {
        if let Some(col) = x_col(global) {
            for d in 0..n {
                values[global * n + d] = z[col + d];
            }
        }
    }
    let trajectory = Trajectory::from_raw_values(prob.grid.clone(), n, values)?;
    let mut control = ControlPath::zeros(prob.grid.clone(), m);
    for i in 1..n_main - 1 {
        let col = u_col(i).expect("interior control column");
        control.set_value(i, z.as_slice()[col..col + m].as_ref())?;
    }
    let multipliers = (0..n_main - 1)
        .map(|i| lambda.as_slice()[i * n..(i + 1) * n].to_vec())
        .collect();

    Ok(KktSolution {
        trajectory,
        control,
        multipliers,
        objective,
        residual,
    })
}

/// Central finite differences of an objective, coordinate by
/// coordinate.
pub fn fd_gradient(obj: &mut dyn Objective, point: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidOptions(format!(
            "epsilon = {epsilon} must be > 0"
        )));
    }
    let mut out = vec![0.0; point.len()];
    let mut probe = point.to_vec();
    for j in 0..point.len() {
        probe[j] = point[j] + epsilon;
        let hi = obj.value(&probe)?;
        probe[j] = point[j] - epsilon;
        let lo = obj.value(&probe)?;
        probe[j] = point[j];
        let d = (hi - lo) / (2.0 * epsilon);
        if !d.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "finite difference along coordinate {j}"
            )));
        }
        out[j] = d;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::penalty::cost_value;
    use crate::rational::{parse_rat, to_f64, Rat};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn r(s: &str) -> Rat {
        parse_rat(s).unwrap()
    }

    #[test]
    fn no_dynamics_reduces_to_quadrature_of_the_control() {
        let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r("0.0625")).unwrap());
        let hist = HistorySpec::constant(grid.tau1(), grid.tau2(), &[2.0]);
        let mut u = ControlPath::zeros(grid.clone(), 1);
        for i in 1..grid.n_main() {
            let t = grid.main_time_f64(i);
            u.set_value(i, &[t * t]).unwrap();
        }
        let path = integrate_mos(
            &DMatrix::zeros(1, 1),
            &DMatrix::identity(1, 1),
            &u,
            &hist,
            &grid,
        )
        .unwrap();
        // x(t) = 2 + trapezoid of u up to t, computed independently.
        let h = grid.step_f64();
        let mut acc = 2.0;
        for i in 0..grid.n_main() - 1 {
            let t0 = grid.main_time_f64(i);
            let t1 = grid.main_time_f64(i + 1);
            let u0 = if i == 0 { 0.0 } else { t0 * t0 };
            acc += 0.5 * h * (u0 + t1 * t1);
            let got = path.value(grid.global_of_main(i + 1))[0];
            assert!((got - acc).abs() <= 1e-12, "node {}: {got} vs {acc}", i + 1);
        }
    }

    #[test]
    fn constant_history_integrates_linearly_over_one_delay() {
        let a = 0.8;
        let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r("0.0625")).unwrap());
        let hist = HistorySpec::constant(grid.tau1(), grid.tau2(), &[1.0]);
        let u = ControlPath::zeros(grid.clone(), 1);
        let path = integrate_mos(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::zeros(1, 1),
            &u,
            &hist,
            &grid,
        )
        .unwrap();
        for i in 0..grid.n_main() {
            let t = grid.main_time_f64(i);
            if t <= to_f64(grid.tau1()) {
                let expect = 1.0 + a * t;
                let got = path.value(grid.global_of_main(i))[0];
                assert!((got - expect).abs() < 1e-13, "t = {t}: {got} vs {expect}");
            }
        }
    }

    /// Symbolic method-of-steps continuation for constant unit history
    /// and no control: affine on the first delay span, quadratic on
    /// the second, cubic on the third.
    fn steps_solution(a: f64, tau1: f64, t: f64) -> f64 {
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
    }

    /// The trapezoidal update is exact through the first two delay
    /// spans (the integrand stays affine there); the truncation error
    /// appears on the third span and shrinks at second order.
    #[test]
    fn matches_symbolic_solution_with_second_order_error() {
        let a = 0.8;
        let tau1 = 0.5;
        let mut errs = Vec::new();
        for h in ["0.125", "0.0625"] {
            let grid = Arc::new(build_grid(r("1.5"), r("0.5"), r("0.25"), r(h)).unwrap());
            let hist = HistorySpec::constant(grid.tau1(), grid.tau2(), &[1.0]);
            let u = ControlPath::zeros(grid.clone(), 1);
            let path = integrate_mos(
                &DMatrix::from_element(1, 1, a),
                &DMatrix::zeros(1, 1),
                &u,
                &hist,
                &grid,
            )
            .unwrap();
            let mut err_two_spans = 0.0f64;
            let mut err = 0.0f64;
            for i in 0..grid.n_main() {
                let t = grid.main_time_f64(i);
                let e = (path.value(grid.global_of_main(i))[0] - steps_solution(a, tau1, t)).abs();
                err = err.max(e);
                if t <= 2.0 * tau1 {
                    err_two_spans = err_two_spans.max(e);
                }
            }
            assert!(err_two_spans <= 1e-12, "first two spans exact, got {err_two_spans}");
            errs.push(err);
        }
        assert!(errs[0] > 0.0);
        assert!(
            errs[0] / errs[1] >= 3.0,
            "order study ratio {} (errors {:?})",
            errs[0] / errs[1],
            errs
        );
    }

    fn zero_instance() -> (ControlProblem, QuadraticCostSpec) {
        let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r("0.125")).unwrap());
        let hist = HistorySpec::constant(grid.tau1(), grid.tau2(), &[0.0]);
        let quad = QuadraticCostSpec::diagonal(1, 0.0, 0.0, 1.0, 1);
        let prob = ControlProblem::new(
            grid,
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            Arc::new(quad.clone()),
            hist,
            vec![0.0],
        )
        .unwrap();
        (prob, quad)
    }

    #[test]
    fn zero_problem_solves_to_zero() {
        let (prob, quad) = zero_instance();
        let sol = lq_direct_solve(&prob, &quad).unwrap();
        assert!(sol.objective.abs() < 1e-12);
        assert!(sol.residual < 1e-10);
        assert!(sol.control.values().iter().all(|&v| v.abs() < 1e-10));
    }

    /// Delays short relative to the horizon so the control influence
    /// passes through A often enough to reach a generic target.
    fn random_instance(rng: &mut StdRng, n: usize, m: usize, h: &str) -> (ControlProblem, QuadraticCostSpec) {
        let grid = Arc::new(build_grid(r("1"), r("0.2"), r("0.1"), r(h)).unwrap());
        let rand_psd = |rng: &mut StdRng, d: usize, shift: f64| {
            let f = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            &f * f.transpose() + DMatrix::identity(d, d) * shift
        };
        let quad = QuadraticCostSpec {
            q: rand_psd(rng, n, 0.0),
            s: rand_psd(rng, n, 0.0),
            r: rand_psd(rng, m, 0.5),
            q_lin: Some(DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5))),
            s_lin: None,
            r_lin: Some(DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5))),
            rho: 0.0,
        };
        let hist = HistorySpec::constant(
            grid.tau1(),
            grid.tau2(),
            &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
        );
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let prob = ControlProblem::new(grid, a, b, Arc::new(quad.clone()), hist, target).unwrap();
        (prob, quad)
    }

    #[test]
    fn kkt_residual_is_tiny_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(31);
        for k in 0..8 {
            let n = 1 + k % 3;
            let m = 1 + k % 2;
            let (prob, quad) = random_instance(&mut rng, n, m, "0.05");
            let sol = lq_direct_solve(&prob, &quad).unwrap();
            assert!(sol.residual <= 1e-8, "instance {k}: residual {}", sol.residual);
        }
    }

    /// With tau1 = T/2, a control impulse passes through A at most
    /// twice before the horizon, so a three-dimensional target is
    /// generically unreachable with a scalar control and the
    /// transcription must flag the singular system.
    #[test]
    fn unreachable_target_is_flagged_singular() {
        let mut rng = StdRng::seed_from_u64(13);
        let grid = Arc::new(build_grid(r("1"), r("0.5"), r("0.25"), r("0.0625")).unwrap());
        let quad = QuadraticCostSpec::diagonal(3, 1.0, 1.0, 1.0, 1);
        let hist = HistorySpec::constant(grid.tau1(), grid.tau2(), &[0.1, 0.2, 0.3]);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0));
        let prob = ControlProblem::new(
            grid,
            a,
            b,
            Arc::new(quad.clone()),
            hist,
            vec![1.0, -2.0, 0.5],
        )
        .unwrap();
        let err = lq_direct_solve(&prob, &quad).unwrap_err();
        assert!(matches!(err, Error::SingularKkt(_)), "got {err}");
    }

    /// The optimum bounds every feasible pair from below: build random
    /// pairs that satisfy the discrete dynamics and the pins exactly,
    /// then compare costs.
    #[test]
    fn objective_lower_bounds_random_feasible_pairs() {
        let mut rng = StdRng::seed_from_u64(77);
        let n = 1;
        let (prob, quad) = random_instance(&mut rng, n, n, "0.125");
        // Square, safely invertible input matrix.
        let mut prob = prob;
        prob.b_mat = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
        let sol = lq_direct_solve(&prob, &quad).unwrap();
        let grid = prob.grid.clone();
        let h = grid.step_f64();
        let n_main = grid.n_main();
        let b_inv = prob.b_mat.clone().try_inverse().unwrap();

        for _ in 0..100 {
            let mut traj = Trajectory::init(
                grid.clone(),
                &prob.history,
                &prob.target,
                crate::trajectory::InitMode::Zero,
            )
            .unwrap();
            let mut u = ControlPath::zeros(grid.clone(), n);
            for i in 1..n_main - 2 {
                u.set_value(i, &[rng.gen_range(-1.0..1.0)]).unwrap();
            }
            // March the dynamics forward through the free nodes.
            let mut x_vals = traj.values().to_vec();
            let k1 = grid.k1();
            for i in 0..n_main - 2 {
                let g = grid.global_of_main(i);
                let lag = g - k1;
                let mut next = vec![0.0; n];
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += prob.a_mat[(r, c)] * x_vals[lag * n + c];
                    }
                    for c in 0..n {
                        acc += prob.b_mat[(r, c)] * u.value(i)[c];
                    }
                    next[r] = x_vals[g * n + r] + h * acc;
                }
                for r in 0..n {
                    x_vals[(g + 1) * n + r] = next[r];
                }
            }
            // Close the loop onto the pinned target with the last
            // weighted control.
            let i = n_main - 2;
            let g = grid.global_of_main(i);
            let lag = g - k1;
            let mut want = vec![0.0; n];
            for r in 0..n {
                let mut acc = (prob.target[r] - x_vals[g * n + r]) / h;
                for c in 0..n {
                    acc -= prob.a_mat[(r, c)] * x_vals[lag * n + c];
                }
                want[r] = acc;
            }
            let mut u_last = vec![0.0; n];
            for r in 0..n {
                for c in 0..n {
                    u_last[r] += b_inv[(r, c)] * want[c];
                }
            }
            u.set_value(i, &u_last).unwrap();
            for global in (grid.n_history() + 1)..grid.last() {
                let vals = x_vals[global * n..(global + 1) * n].to_vec();
                traj.set_value(global, &vals).unwrap();
            }
            let feasible_cost = cost_value(&prob, &traj, &u).unwrap();
            assert!(
                feasible_cost >= sol.objective - 1e-8 * sol.objective.abs().max(1.0),
                "feasible pair beats the optimum: {feasible_cost} < {}",
                sol.objective
            );
        }
    }

    struct SquaredNorm;

    impl Objective for SquaredNorm {
        fn dim(&self) -> usize {
            2
        }
        fn value(&mut self, x: &[f64]) -> Result<f64> {
            Ok(x.iter().map(|v| v * v).sum())
        }
        fn gradient_into(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
            for (o, v) in out.iter_mut().zip(x) {
                *o = 2.0 * v;
            }
            Ok(())
        }
    }

    #[test]
    fn finite_differences_are_exact_for_quadratics() {
        let g = fd_gradient(&mut SquaredNorm, &[1.0, 2.0], 1e-6).unwrap();
        assert!((g[0] - 2.0).abs() <= 1e-8);
        assert!((g[1] - 4.0).abs() <= 1e-8);
        struct Constant;
        impl Objective for Constant {
            fn dim(&self) -> usize {
                3
            }
            fn value(&mut self, _x: &[f64]) -> Result<f64> {
                Ok(7.0)
            }
            fn gradient_into(&mut self, _x: &[f64], out: &mut [f64]) -> Result<()> {
                out.fill(0.0);
                Ok(())
            }
        }
        let g = fd_gradient(&mut Constant, &[0.3, -0.4, 0.5], 1e-6).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
        assert!(fd_gradient(&mut SquaredNorm, &[0.0, 0.0], 0.0).is_err());
    }

    /// Shrinking the probe improves the truncation error until the
    /// cancellation floor takes over.
    #[test]
    fn fd_error_shrinks_with_epsilon_until_roundoff() {
        struct Cubic;
        impl Objective for Cubic {
            fn dim(&self) -> usize {
                1
            }
            fn value(&mut self, x: &[f64]) -> Result<f64> {
                Ok(x[0] * x[0] * x[0])
            }
            fn gradient_into(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
                out[0] = 3.0 * x[0] * x[0];
                Ok(())
            }
        }
        // Central difference of x^3 at 1 has error exactly eps^2.
        let err = |eps: f64| (fd_gradient(&mut Cubic, &[1.0], eps).unwrap()[0] - 3.0).abs();
        let coarse = err(1e-3);
        let sweet = err(1e-6);
        let floor = err(1e-12);
        assert!(coarse > 100.0 * sweet, "coarse {coarse:.3e} vs sweet {sweet:.3e}");
        assert!(floor > sweet, "roundoff floor {floor:.3e} vs sweet {sweet:.3e}");
    }
}
