//! Discrete state paths on [-tau1, horizon] and control paths on
//! [0, horizon], with the boundary data pinned.
//!
//! Pins: every node with t <= 0 carries the history samples, the
//! terminal node carries the target state, and the control vanishes at
//! t = 0. Free coordinates are exactly the interior main nodes (and all
//! control nodes after the first), so a solver that only ever writes
//! free coordinates preserves the pins bit for bit.

use std::io::Write;
use std::sync::Arc;

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::grid::{DelayGrid, DelaySelector};
use crate::rational::{to_f64, Rat};

/// One polynomial piece of a history function: coefficients in
/// ascending powers of t, one row per state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyPiece {
    pub start: Rat,
    pub end: Rat,
    pub coeffs: Vec<Vec<f64>>,
}

impl PolyPiece {
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        for (dim, poly) in self.coeffs.iter().enumerate() {
            let mut acc = 0.0;
            for &c in poly.iter().rev() {
                acc = acc * t + c;
            }
            out[dim] = acc;
        }
    }
}

/// Prescribed state on [-tau1, 0]: one piecewise polynomial on
/// [-tau1, -tau2], another on [-tau2, 0].
///
/// At the junction -tau2 the second segment wins (it is the segment
/// that carries derivative information); the two pieces are not
/// required to agree there.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySpec {
    theta1: Vec<PolyPiece>,
    theta2: Vec<PolyPiece>,
    state_dim: usize,
}

impl HistorySpec {
    pub fn new(theta1: Vec<PolyPiece>, theta2: Vec<PolyPiece>, state_dim: usize) -> Result<Self> {
        if theta1.is_empty() || theta2.is_empty() {
            return Err(Error::DimensionMismatch(
                "history needs at least one piece per segment".into(),
            ));
        }
        for (name, pieces) in [("theta1", &theta1), ("theta2", &theta2)] {
            for (k, p) in pieces.iter().enumerate() {
                if p.coeffs.len() != state_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} piece {k} has {} coefficient rows, expected {state_dim}",
                        p.coeffs.len()
                    )));
                }
                if p.coeffs.iter().any(|row| row.is_empty()) {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} piece {k} has an empty coefficient row"
                    )));
                }
                if p.start >= p.end {
                    return Err(Error::OrderViolation(format!(
                        "{name} piece {k} has start {} >= end {}",
                        p.start, p.end
                    )));
                }
            }
            for k in 1..pieces.len() {
                if pieces[k].start != pieces[k - 1].end {
                    return Err(Error::OrderViolation(format!(
                        "{name} pieces {} and {k} are not contiguous",
                        k - 1
                    )));
                }
            }
        }
        Ok(Self {
            theta1,
            theta2,
            state_dim,
        })
    }

    /// Constant history over both segments.
    pub fn constant(tau1: Rat, tau2: Rat, value: &[f64]) -> Self {
        let piece = |a: Rat, b: Rat| PolyPiece {
            start: a,
            end: b,
            coeffs: value.iter().map(|&v| vec![v]).collect(),
        };
        Self {
            theta1: vec![piece(-tau1, -tau2)],
            theta2: vec![piece(-tau2, Rat::zero())],
            state_dim: value.len(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn theta1(&self) -> &[PolyPiece] {
        &self.theta1
    }

    pub fn theta2(&self) -> &[PolyPiece] {
        &self.theta2
    }

    /// Checks that the two segments exactly tile [-tau1, 0].
    pub fn validate_domains(&self, tau1: Rat, tau2: Rat) -> Result<()> {
        let t1 = (&self.theta1[0], self.theta1.last().unwrap());
        if t1.0.start != -tau1 || t1.1.end != -tau2 {
            return Err(Error::OrderViolation(format!(
                "theta1 must cover [-{tau1}, -{tau2}] exactly, covers [{}, {}]",
                t1.0.start, t1.1.end
            )));
        }
        let t2 = (&self.theta2[0], self.theta2.last().unwrap());
        if t2.0.start != -tau2 || !t2.1.end.is_zero() {
            return Err(Error::OrderViolation(format!(
                "theta2 must cover [-{tau2}, 0] exactly, covers [{}, {}]",
                t2.0.start, t2.1.end
            )));
        }
        Ok(())
    }

    /// Samples the history at an exact time in [-tau1, 0].
    pub fn sample(&self, t: Rat, out: &mut [f64]) -> Result<()> {
        if out.len() != self.state_dim {
            return Err(Error::DimensionMismatch(format!(
                "output buffer length {} != state dim {}",
                out.len(),
                self.state_dim
            )));
        }
        let segment = if t >= self.theta2[0].start {
            &self.theta2
        } else {
            &self.theta1
        };
        // Later pieces win shared boundaries.
        let piece = segment
            .iter()
            .rev()
            .find(|p| t >= p.start && t <= p.end)
            .ok_or_else(|| Error::IndexOutOfRange(format!("history undefined at t = {t}")))?;
        piece.eval(to_f64(t), out);
        Ok(())
    }
}

/// Discrete state path over every grid node, boundary data pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Arc<DelayGrid>,
    state_dim: usize,
    /// Node-major storage: `values[node * state_dim + d]`.
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Straight line from the history value at t = 0 to the target.
    Linear,
    /// Zero interior.
    Zero,
}

/// State and derivative data entering the integrand at one main node:
/// the current state, the state one tau1 ago, the current rate and the
/// rate one tau2 ago.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedTuple {
    pub t: f64,
    pub state: Vec<f64>,
    pub state_lag: Vec<f64>,
    pub rate: Vec<f64>,
    pub rate_lag: Vec<f64>,
}

impl Trajectory {
    /// Builds a feasible trajectory: history nodes sampled from `hist`,
    /// terminal node set to `target`, interior per `mode`.
    pub fn init(
        grid: Arc<DelayGrid>,
        hist: &HistorySpec,
        target: &[f64],
        mode: InitMode,
    ) -> Result<Self> {
        let n = hist.state_dim();
        if target.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "target length {} != state dim {n}",
                target.len()
            )));
        }
        hist.validate_domains(grid.tau1(), grid.tau2())?;
        let mut values = vec![0.0; grid.n_total() * n];

        // Pins: t in [-tau1, 0] and the terminal node.
        for j in 0..=grid.n_history() {
            hist.sample(grid.node(j), &mut values[j * n..(j + 1) * n])?;
        }
        let last = grid.last();
        values[last * n..(last + 1) * n].copy_from_slice(target);

        let start: Vec<f64> = values[grid.n_history() * n..(grid.n_history() + 1) * n].to_vec();
        let horizon = to_f64(grid.horizon());
        for i in 1..grid.n_main() - 1 {
            let j = grid.global_of_main(i);
            let frac = grid.main_time_f64(i) / horizon;
            for d in 0..n {
                values[j * n + d] = match mode {
                    InitMode::Linear => start[d] + frac * (target[d] - start[d]),
                    InitMode::Zero => 0.0,
                };
            }
        }
        Ok(Self {
            grid,
            state_dim: n,
            values,
        })
    }

    /// Builds a trajectory from a caller-supplied full value array.
    ///
    /// The pinned entries must equal the history samples and the target
    /// exactly; anything else is rejected.
    pub fn init_custom(
        grid: Arc<DelayGrid>,
        hist: &HistorySpec,
        target: &[f64],
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = hist.state_dim();
        if values.len() != grid.n_total() * n {
            return Err(Error::DimensionMismatch(format!(
                "custom array has length {}, expected {}",
                values.len(),
                grid.n_total() * n
            )));
        }
        let reference = Self::init(grid, hist, target, InitMode::Zero)?;
        let mut out = reference.clone();
        for j in 0..out.grid.n_total() {
            if out.is_pinned(j) {
                let expect = &reference.values[j * n..(j + 1) * n];
                let got = &values[j * n..(j + 1) * n];
                if expect != got {
                    return Err(Error::CustomArrayViolatesPins(format!(
                        "node {j} (t = {}): expected {expect:?}, got {got:?}",
                        out.grid.node(j)
                    )));
                }
            }
        }
        out.values = values;
        Ok(out)
    }

    /// Wraps raw values without enforcing any pins. Used for externally
    /// produced paths (integrator output, CSV input) that the residual
    /// machinery inspects as-is.
    pub fn from_raw_values(grid: Arc<DelayGrid>, state_dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_total() * state_dim {
            return Err(Error::DimensionMismatch(format!(
                "value array has length {}, expected {}",
                values.len(),
                grid.n_total() * state_dim
            )));
        }
        Ok(Self {
            grid,
            state_dim,
            values,
        })
    }

    pub fn grid(&self) -> &Arc<DelayGrid> {
        &self.grid
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True for history nodes (t <= 0) and the terminal node.
    pub fn is_pinned(&self, global: usize) -> bool {
        global <= self.grid.n_history() || global == self.grid.last()
    }

    pub fn value(&self, global: usize) -> &[f64] {
        &self.values[global * self.state_dim..(global + 1) * self.state_dim]
    }

    /// Writes one node value; refuses pinned nodes.
    pub fn set_value(&mut self, global: usize, value: &[f64]) -> Result<()> {
        if value.len() != self.state_dim {
            return Err(Error::DimensionMismatch(format!(
                "value length {} != state dim {}",
                value.len(),
                self.state_dim
            )));
        }
        if self.is_pinned(global) {
            return Err(Error::PinnedNodeWrite(global));
        }
        self.values[global * self.state_dim..(global + 1) * self.state_dim].copy_from_slice(value);
        Ok(())
    }

    /// Number of free scalar coordinates (interior main nodes).
    pub fn free_len(&self) -> usize {
        (self.grid.n_main() - 2) * self.state_dim
    }

    /// Copies the free coordinates into `out`, ordered by node then dim.
    pub fn read_free(&self, out: &mut [f64]) {
        let n = self.state_dim;
        let base = (self.grid.n_history() + 1) * n;
        out.copy_from_slice(&self.values[base..base + self.free_len()]);
    }

    /// Overwrites the free coordinates from `src`.
    pub fn write_free(&mut self, src: &[f64]) {
        let n = self.state_dim;
        let base = (self.grid.n_history() + 1) * n;
        let len = self.free_len();
        self.values[base..base + len].copy_from_slice(src);
    }

    /// Forward difference at `global`; backward at the terminal node.
    ///
    /// Total on every node: history slopes come from the sampled
    /// history values, which is exactly what the rate-delay term needs.
    pub fn derivative_at(&self, global: usize, out: &mut [f64]) {
        let n = self.state_dim;
        let h = self.grid.step_f64();
        let (lo, hi) = if global == self.grid.last() {
            (global - 1, global)
        } else {
            (global, global + 1)
        };
        for d in 0..n {
            out[d] = (self.values[hi * n + d] - self.values[lo * n + d]) / h;
        }
    }

    /// Assembles the integrand arguments at main node `i`.
    pub fn delayed_tuple(&self, i: usize) -> Result<DelayedTuple> {
        let n = self.state_dim;
        let g = self.grid.global_of_main(i);
        let j1 = self.grid.shifted_index(i, DelaySelector::Tau1)?;
        let j2 = self.grid.shifted_index(i, DelaySelector::Tau2)?;
        let mut rate = vec![0.0; n];
        let mut rate_lag = vec![0.0; n];
        self.derivative_at(g, &mut rate);
        self.derivative_at(j2, &mut rate_lag);
        Ok(DelayedTuple {
            t: self.grid.main_time_f64(i),
            state: self.value(g).to_vec(),
            state_lag: self.value(j1).to_vec(),
            rate,
            rate_lag,
        })
    }

    /// CSV rows (t, x_1..x_N[, u_1..u_m]); history rows carry negative t
    /// and empty control cells.
    pub fn write_csv<W: Write>(&self, control: Option<&ControlPath>, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for d in 0..self.state_dim {
            write!(w, ",x{}", d + 1)?;
        }
        if let Some(u) = control {
            for d in 0..u.control_dim() {
                write!(w, ",u{}", d + 1)?;
            }
        }
        writeln!(w)?;
        for j in 0..self.grid.n_total() {
            write!(w, "{:.16e}", to_f64(self.grid.node(j)))?;
            for v in self.value(j) {
                write!(w, ",{v:.16e}")?;
            }
            if let Some(u) = control {
                if j >= self.grid.n_history() {
                    for v in u.value(j - self.grid.n_history()) {
                        write!(w, ",{v:.16e}")?;
                    }
                } else {
                    for _ in 0..u.control_dim() {
                        write!(w, ",")?;
                    }
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Discrete control path over the main nodes, `u(0) = 0` pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    grid: Arc<DelayGrid>,
    control_dim: usize,
    values: Vec<f64>,
}

impl ControlPath {
    pub fn zeros(grid: Arc<DelayGrid>, control_dim: usize) -> Self {
        let values = vec![0.0; grid.n_main() * control_dim];
        Self {
            grid,
            control_dim,
            values,
        }
    }

    pub fn grid(&self) -> &Arc<DelayGrid> {
        &self.grid
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Value at main node `i`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.control_dim..(i + 1) * self.control_dim]
    }

    pub fn set_value(&mut self, i: usize, value: &[f64]) -> Result<()> {
        if value.len() != self.control_dim {
            return Err(Error::DimensionMismatch(format!(
                "value length {} != control dim {}",
                value.len(),
                self.control_dim
            )));
        }
        if i == 0 {
            return Err(Error::PinnedNodeWrite(0));
        }
        self.values[i * self.control_dim..(i + 1) * self.control_dim].copy_from_slice(value);
        Ok(())
    }

    /// Free scalar coordinates: every main node except the first.
    pub fn free_len(&self) -> usize {
        (self.grid.n_main() - 1) * self.control_dim
    }

    pub fn read_free(&self, out: &mut [f64]) {
        out.copy_from_slice(&self.values[self.control_dim..]);
    }

    pub fn write_free(&mut self, src: &[f64]) {
        let m = self.control_dim;
        self.values[m..].copy_from_slice(src);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Admissible variation direction: vanishes on [-tau1, 0] and at the
/// terminal node.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    grid: Arc<DelayGrid>,
    state_dim: usize,
    values: Vec<f64>,
}

impl TangentVector {
    /// Zeros the pinned entries of a raw node vector; the interior is
    /// left untouched. Idempotent and linear.
    pub fn project(grid: Arc<DelayGrid>, state_dim: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_total() * state_dim {
            return Err(Error::DimensionMismatch(format!(
                "raw vector has length {}, expected {}",
                values.len(),
                grid.n_total() * state_dim
            )));
        }
        for j in 0..=grid.n_history() {
            for d in 0..state_dim {
                values[j * state_dim + d] = 0.0;
            }
        }
        let last = grid.last();
        for d in 0..state_dim {
            values[last * state_dim + d] = 0.0;
        }
        Ok(Self {
            grid,
            state_dim,
            values,
        })
    }

    pub fn grid(&self) -> &Arc<DelayGrid> {
        &self.grid
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, global: usize) -> &[f64] {
        &self.values[global * self.state_dim..(global + 1) * self.state_dim]
    }

    /// The free coordinates (interior main nodes), matching the
    /// trajectory layout.
    pub fn free_components(&self) -> &[f64] {
        let n = self.state_dim;
        let base = (self.grid.n_history() + 1) * n;
        let len = (self.grid.n_main() - 2) * n;
        &self.values[base..base + len]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
