//! The discretized functional, its exact gradient over the free nodes,
//! and the first-order residual checker.
//!
//! The functional integrates the integrand over [0, horizon] with the
//! left-endpoint rule on the node tuples: each of the first
//! `n_main - 1` main nodes carries weight h, the terminal node carries
//! none. Together with forward differences this makes the discrete
//! functional the exact integral of the piecewise-constant-rate
//! interpretation of the path, so affine trajectories are exactly
//! stationary for rate-only integrands. The gradient below is the
//! exact derivative of this discrete functional (discretize first,
//! differentiate second), so finite-difference checks hold to
//! roundoff.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::DelayGrid;
use crate::lagrangian::{eval_lagrangian, eval_partials, DelayedLagrangian};
use crate::trajectory::{HistorySpec, TangentVector, Trajectory};

/// A fixed-horizon delayed variational problem: grid, integrand,
/// history and terminal target. The grid is the single source of truth
/// for the two delays.
#[derive(Clone)]
pub struct VariationalProblem {
    pub grid: Arc<DelayGrid>,
    pub lagrangian: Arc<dyn DelayedLagrangian>,
    pub history: HistorySpec,
    pub target: Vec<f64>,
}

impl VariationalProblem {
    pub fn new(
        grid: Arc<DelayGrid>,
        lagrangian: Arc<dyn DelayedLagrangian>,
        history: HistorySpec,
        target: Vec<f64>,
    ) -> Result<Self> {
        let n = lagrangian.state_dim();
        if history.state_dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "history dim {} != integrand dim {n}",
                history.state_dim()
            )));
        }
        if target.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "target length {} != integrand dim {n}",
                target.len()
            )));
        }
        history.validate_domains(grid.tau1(), grid.tau2())?;
        Ok(Self {
            grid,
            lagrangian,
            history,
            target,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.lagrangian.state_dim()
    }
}

/// Value of the discretized functional.
pub fn functional_value(prob: &VariationalProblem, traj: &Trajectory) -> Result<f64> {
    let grid = prob.grid.as_ref();
    let h = grid.step_f64();
    let mut acc = 0.0;
    for i in 0..grid.n_main() - 1 {
        let tup = traj.delayed_tuple(i)?;
        acc += h * eval_lagrangian(
            prob.lagrangian.as_ref(),
            tup.t,
            &tup.state,
            &tup.state_lag,
            &tup.rate,
            &tup.rate_lag,
        )?;
    }
    Ok(acc)
}

/// Exact gradient of [`functional_value`] with respect to the node
/// values, projected onto the tangent space of the pinned set.
///
/// Per evaluated node: the state partial lands on that node, the
/// lagged-state partial k1 nodes back, and the two rate partials land
/// on their forward-difference stencils.
pub fn gradient(prob: &VariationalProblem, traj: &Trajectory) -> Result<TangentVector> {
    let grid = prob.grid.as_ref();
    let n = prob.state_dim();
    let h = grid.step_f64();
    let k1 = grid.k1();
    let k2 = grid.k2();
    let mut raw = vec![0.0; grid.n_total() * n];
    for i in 0..grid.n_main() - 1 {
        let tup = traj.delayed_tuple(i)?;
        let p = eval_partials(
            prob.lagrangian.as_ref(),
            tup.t,
            &tup.state,
            &tup.state_lag,
            &tup.rate,
            &tup.rate_lag,
        )?;
        let g = grid.global_of_main(i);
        for d in 0..n {
            raw[g * n + d] += h * p.d_state[d];
            raw[(g - k1) * n + d] += h * p.d_state_lag[d];
            // h * d_rate * d(forward difference)/d(node) = +-d_rate
            raw[g * n + d] -= p.d_rate[d];
            raw[(g + 1) * n + d] += p.d_rate[d];
            raw[(g - k2) * n + d] -= p.d_rate_lag[d];
            raw[(g - k2 + 1) * n + d] += p.d_rate_lag[d];
        }
    }
    TangentVector::project(prob.grid.clone(), n, raw)
}

/// Zeros the pinned entries of a raw node vector.
pub fn project_tangent(grid: Arc<DelayGrid>, state_dim: usize, raw: Vec<f64>) -> Result<TangentVector> {
    TangentVector::project(grid, state_dim, raw)
}

/// Integrand partials evaluated along a trajectory, one entry per main
/// node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodePartials {
    pub d_state: Vec<Vec<f64>>,
    pub d_state_lag: Vec<Vec<f64>>,
    pub d_rate: Vec<Vec<f64>>,
    pub d_rate_lag: Vec<Vec<f64>>,
}

/// Residuals of the first-order conditions over one regime of the
/// horizon.
///
/// The aggregate norm covers the regime core, nodes at least
/// [`BOUNDARY_LAYER`] away from either regime end. The interior
/// equations hold almost everywhere, and the discrete minimizer
/// develops genuine momentum corners within a node or two of the
/// regime boundaries (the discrete counterparts of the corners the
/// continuous conditions permit exactly at the boundaries); those
/// few nodes are reported but would otherwise swamp the norm with
/// an O(1/h) stencil artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeResidual {
    /// First and last main-node index of the regime (inclusive).
    pub first_main: usize,
    pub last_main: usize,
    /// Residual vector per node of the regime, one-sided time stencils
    /// at the regime ends.
    pub residuals: Vec<Vec<f64>>,
    /// Discrete L2 norm over the regime core.
    pub norm: f64,
}

/// Nodes this close to a regime end are excluded from the aggregate
/// norms (their values are still reported per node).
pub const BOUNDARY_LAYER: usize = 3;

/// Residual of a boundary node between two regimes, evaluated one-sided
/// from the left regime. Reported without a pass/fail judgment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryResidual {
    pub main_index: usize,
    pub t: f64,
    pub residual: Vec<f64>,
}

/// First-order residuals split into the three regimes
/// [0, T-tau1], (T-tau1, T-tau2], (T-tau2, T].
///
/// On the first two regimes the residual is
/// d/dt {d_rate(t) + d_rate_lag(t + tau2)} minus the right-hand side
/// (d_state(t) + d_state_lag(t + tau1) on the first regime, d_state(t)
/// on the second); on the last regime the advanced rate term drops and
/// the residual is d/dt d_rate(t) - d_state(t).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElResidual {
    pub regimes: [RegimeResidual; 3],
    pub partials: NodePartials,
    pub boundary: Vec<BoundaryResidual>,
    pub warnings: Vec<String>,
}

impl ElResidual {
    pub fn norms(&self) -> [f64; 3] {
        [
            self.regimes[0].norm,
            self.regimes[1].norm,
            self.regimes[2].norm,
        ]
    }

    /// CSV rows (t, regime, residual components, node norm).
    pub fn write_csv<W: Write>(&self, grid: &DelayGrid, mut w: W) -> std::io::Result<()> {
        let n = self
            .regimes
            .iter()
            .flat_map(|r| r.residuals.first())
            .map(Vec::len)
            .next()
            .unwrap_or(0);
        write!(w, "t,regime")?;
        for d in 0..n {
            write!(w, ",res{}", d + 1)?;
        }
        writeln!(w, ",norm")?;
        for (k, regime) in self.regimes.iter().enumerate() {
            for (off, res) in regime.residuals.iter().enumerate() {
                let i = regime.first_main + off;
                write!(w, "{:.16e},{}", grid.main_time_f64(i), k + 1)?;
                for v in res {
                    write!(w, ",{v:.16e}")?;
                }
                let norm: f64 = res.iter().map(|v| v * v).sum::<f64>().sqrt();
                writeln!(w, ",{norm:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Computes the three-regime first-order residual of a trajectory.
pub fn el_residual(prob: &VariationalProblem, traj: &Trajectory) -> Result<ElResidual> {
    let grid = prob.grid.as_ref();
    let n = prob.state_dim();
    let m = grid.n_main();
    let h = grid.step_f64();
    let k1 = grid.k1();
    let k2 = grid.k2();

    let mut partials = NodePartials {
        d_state: Vec::with_capacity(m),
        d_state_lag: Vec::with_capacity(m),
        d_rate: Vec::with_capacity(m),
        d_rate_lag: Vec::with_capacity(m),
    };
    for i in 0..m {
        let tup = traj.delayed_tuple(i)?;
        let p = eval_partials(
            prob.lagrangian.as_ref(),
            tup.t,
            &tup.state,
            &tup.state_lag,
            &tup.rate,
            &tup.rate_lag,
        )?;
        partials.d_state.push(p.d_state);
        partials.d_state_lag.push(p.d_state_lag);
        partials.d_rate.push(p.d_rate);
        partials.d_rate_lag.push(p.d_rate_lag);
    }

    // Regime boundaries: the left-closed regimes own the boundary
    // nodes T - tau1 and T - tau2.
    let e1 = m - 1 - k1;
    let e2 = m - 1 - k2;
    let ranges = [(0usize, e1), (e1 + 1, e2), (e2 + 1, m - 1)];
    let mut warnings = Vec::new();

    // Momentum entering the time derivative. Regimes 1-2 combine the
    // rate partial with the advanced lagged-rate partial; regime 3 has
    // the bare rate partial.
    let momentum = |regime: usize, i: usize| -> Vec<f64> {
        if regime < 2 {
            let mut v = partials.d_rate[i].clone();
            for d in 0..n {
                v[d] += partials.d_rate_lag[i + k2][d];
            }
            v
        } else {
            partials.d_rate[i].clone()
        }
    };
    let rhs = |regime: usize, i: usize| -> Vec<f64> {
        let mut v = partials.d_state[i].clone();
        if regime == 0 {
            for d in 0..n {
                v[d] += partials.d_state_lag[i + k1][d];
            }
        }
        v
    };

    let mut regimes = Vec::with_capacity(3);
    for (regime, &(s, e)) in ranges.iter().enumerate() {
        let len = e + 1 - s;
        if len < 2 * BOUNDARY_LAYER + 1 {
            warnings.push(format!(
                "regime {} has {len} node(s), fewer than {}; its aggregate norm covers no nodes",
                regime + 1,
                2 * BOUNDARY_LAYER + 1
            ));
        }
        let mut residuals = Vec::with_capacity(len);
        let mut norm_sq = 0.0;
        for i in s..=e {
            let ddt: Vec<f64> = if len == 1 {
                // Single-node regime: borrow the left neighbor, which
                // still supports this regime's momentum formula.
                let cur = momentum(regime, i);
                let prev = momentum(regime, i - 1);
                (0..n).map(|d| (cur[d] - prev[d]) / h).collect()
            } else if i == s {
                let a = momentum(regime, s);
                let b = momentum(regime, s + 1);
                (0..n).map(|d| (b[d] - a[d]) / h).collect()
            } else if i == e {
                let a = momentum(regime, e - 1);
                let b = momentum(regime, e);
                (0..n).map(|d| (b[d] - a[d]) / h).collect()
            } else {
                let a = momentum(regime, i - 1);
                let b = momentum(regime, i + 1);
                (0..n).map(|d| (b[d] - a[d]) / (2.0 * h)).collect()
            };
            let r = rhs(regime, i);
            let res: Vec<f64> = (0..n).map(|d| ddt[d] - r[d]).collect();
            if res.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("residual at main node {i}")));
            }
            if i >= s + BOUNDARY_LAYER && i + BOUNDARY_LAYER <= e {
                norm_sq += h * res.iter().map(|v| v * v).sum::<f64>();
            }
            residuals.push(res);
        }
        regimes.push(RegimeResidual {
            first_main: s,
            last_main: e,
            residuals,
            norm: norm_sq.sqrt(),
        });
    }

    let boundary = [e1, e2]
        .into_iter()
        .map(|i| {
            let regime = usize::from(i == e2);
            let cur = momentum(regime, i);
            let prev = momentum(regime, i.saturating_sub(1));
            let r = rhs(regime, i);
            BoundaryResidual {
                main_index: i,
                t: grid.main_time_f64(i),
                residual: (0..n).map(|d| (cur[d] - prev[d]) / h - r[d]).collect(),
            }
        })
        .collect();

    let regimes: [RegimeResidual; 3] = regimes.try_into().expect("exactly three regimes");
    Ok(ElResidual {
        regimes,
        partials,
        boundary,
        warnings,
    })
}


/// Adapts a variational problem to the inner minimizer: the decision
/// vector is the free node values.
pub struct VariationalObjective {
    prob: VariationalProblem,
    traj: Trajectory,
}

impl VariationalObjective {
    pub fn new(prob: VariationalProblem, traj: Trajectory) -> Self {
        Self { prob, traj }
    }

    pub fn trajectory_with(&mut self, free: &[f64]) -> &Trajectory {
        self.traj.write_free(free);
        &self.traj
    }

    pub fn problem(&self) -> &VariationalProblem {
        &self.prob
    }
}

impl crate::descent::Objective for VariationalObjective {
    fn dim(&self) -> usize {
        self.traj.free_len()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.traj.write_free(x);
        functional_value(&self.prob, &self.traj)
    }

    fn gradient_into(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.traj.write_free(x);
        let g = gradient(&self.prob, &self.traj)?;
        out.copy_from_slice(g.free_components());
        Ok(())
    }
}
