//! Integrands with delayed arguments and their analytic partial
//! derivatives, a built-in quadratic family, and the penalized
//! integrand that welds a running cost to linear delayed dynamics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gradients of a delayed integrand with respect to its four vector
/// arguments (state, lagged state, rate, lagged rate).
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub d_state: Vec<f64>,
    pub d_state_lag: Vec<f64>,
    pub d_rate: Vec<f64>,
    pub d_rate_lag: Vec<f64>,
}

impl Partials {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_state: vec![0.0; n],
            d_state_lag: vec![0.0; n],
            d_rate: vec![0.0; n],
            d_rate_lag: vec![0.0; n],
        }
    }
}

/// An integrand L(t, state, state_lag, rate, rate_lag).
///
/// Implementations must be reentrant; the partials must be the true
/// gradients of `eval` (checked against finite differences in tests).
pub trait DelayedLagrangian: Send + Sync {
    fn state_dim(&self) -> usize;

    fn eval(&self, t: f64, state: &[f64], state_lag: &[f64], rate: &[f64], rate_lag: &[f64])
        -> f64;

    fn partials(
        &self,
        t: f64,
        state: &[f64],
        state_lag: &[f64],
        rate: &[f64],
        rate_lag: &[f64],
    ) -> Partials;

    /// False when the partials come from a finite-difference fallback;
    /// solve reports surface this flag.
    fn partials_exact(&self) -> bool {
        true
    }
}

/// Evaluates an integrand and rejects NaN or infinity.
pub fn eval_lagrangian(
    lag: &dyn DelayedLagrangian,
    t: f64,
    state: &[f64],
    state_lag: &[f64],
    rate: &[f64],
    rate_lag: &[f64],
) -> Result<f64> {
    let v = lag.eval(t, state, state_lag, rate, rate_lag);
    if !v.is_finite() {
        return Err(Error::NonFiniteValue(format!("integrand value {v} at t = {t}")));
    }
    Ok(v)
}

/// Evaluates partials and rejects non-finite components.
pub fn eval_partials(
    lag: &dyn DelayedLagrangian,
    t: f64,
    state: &[f64],
    state_lag: &[f64],
    rate: &[f64],
    rate_lag: &[f64],
) -> Result<Partials> {
    let p = lag.partials(t, state, state_lag, rate, rate_lag);
    for (name, v) in [
        ("d_state", &p.d_state),
        ("d_state_lag", &p.d_state_lag),
        ("d_rate", &p.d_rate),
        ("d_rate_lag", &p.d_rate_lag),
    ] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue(format!("{name} at t = {t}")));
        }
    }
    Ok(p)
}

/// Quadratic integrand over the stacked argument
/// z = [state; state_lag; rate; rate_lag] in R^{4N}:
/// L = z' W z + lin . z + offset, with W symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLagrangian {
    state_dim: usize,
    /// Row-major 4N x 4N symmetric weight matrix.
    w: Vec<f64>,
    lin: Vec<f64>,
    offset: f64,
}

impl QuadraticLagrangian {
    pub fn new(state_dim: usize, w: Vec<f64>, lin: Vec<f64>, offset: f64) -> Result<Self> {
        let dim = 4 * state_dim;
        if w.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix has {} entries, expected {}",
                w.len(),
                dim * dim
            )));
        }
        if lin.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "linear term has {} entries, expected {dim}",
                lin.len()
            )));
        }
        for r in 0..dim {
            for c in 0..r {
                if (w[r * dim + c] - w[c * dim + r]).abs() > 1e-12 {
                    return Err(Error::DimensionMismatch(format!(
                        "weight matrix not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        Ok(Self {
            state_dim,
            w,
            lin,
            offset,
        })
    }

    /// Block-diagonal weights: one N x N symmetric block per argument
    /// slot, missing blocks are zero.
    pub fn from_slots(
        state_dim: usize,
        slots: [Option<&[f64]>; 4],
        lin: Option<Vec<f64>>,
    ) -> Result<Self> {
        let dim = 4 * state_dim;
        let mut w = vec![0.0; dim * dim];
        for (s, block) in slots.iter().enumerate() {
            if let Some(block) = block {
                if block.len() != state_dim * state_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "slot {s} block has {} entries, expected {}",
                        block.len(),
                        state_dim * state_dim
                    )));
                }
                for r in 0..state_dim {
                    for c in 0..state_dim {
                        w[(s * state_dim + r) * dim + (s * state_dim + c)] =
                            block[r * state_dim + c];
                    }
                }
            }
        }
        Self::new(state_dim, w, lin.unwrap_or_else(|| vec![0.0; dim]), 0.0)
    }

    /// L = |state|^2 + |state_lag|^2 + |rate|^2 + |rate_lag|^2 scaled
    /// per slot. A weight of zero drops the slot.
    pub fn diagonal(state_dim: usize, slot_weights: [f64; 4]) -> Self {
        let dim = 4 * state_dim;
        let mut w = vec![0.0; dim * dim];
        for (s, &sw) in slot_weights.iter().enumerate() {
            for d in 0..state_dim {
                let k = s * state_dim + d;
                w[k * dim + k] = sw;
            }
        }
        Self {
            state_dim,
            w,
            lin: vec![0.0; dim],
            offset: 0.0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn linear(&self) -> &[f64] {
        &self.lin
    }

    fn stack<'a>(&self, state: &'a [f64], state_lag: &'a [f64], rate: &'a [f64], rate_lag: &'a [f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(4 * self.state_dim);
        z.extend_from_slice(state);
        z.extend_from_slice(state_lag);
        z.extend_from_slice(rate);
        z.extend_from_slice(rate_lag);
        z
    }
}

impl DelayedLagrangian for QuadraticLagrangian {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn eval(&self, _t: f64, state: &[f64], state_lag: &[f64], rate: &[f64], rate_lag: &[f64]) -> f64 {
        let z = self.stack(state, state_lag, rate, rate_lag);
        let dim = z.len();
        let mut acc = self.offset;
        for r in 0..dim {
            let mut row = 0.0;
            for c in 0..dim {
                row += self.w[r * dim + c] * z[c];
            }
            acc += z[r] * row + self.lin[r] * z[r];
        }
        acc
    }

    fn partials(&self, _t: f64, state: &[f64], state_lag: &[f64], rate: &[f64], rate_lag: &[f64]) -> Partials {
        let z = self.stack(state, state_lag, rate, rate_lag);
        let dim = z.len();
        let n = self.state_dim;
        // gradient = 2 W z + lin, split into the four slots
        let mut full = vec![0.0; dim];
        for r in 0..dim {
            let mut row = 0.0;
            for c in 0..dim {
                row += self.w[r * dim + c] * z[c];
            }
            full[r] = 2.0 * row + self.lin[r];
        }
        Partials {
            d_state: full[0..n].to_vec(),
            d_state_lag: full[n..2 * n].to_vec(),
            d_rate: full[2 * n..3 * n].to_vec(),
            d_rate_lag: full[3 * n..4 * n].to_vec(),
        }
    }
}

/// Wraps an integrand, replacing its partials by central finite
/// differences. Reports built on top flag the inexact partials.
pub struct FiniteDifferencePartials<L> {
    inner: L,
    epsilon: f64,
}

impl<L: DelayedLagrangian> FiniteDifferencePartials<L> {
    pub fn new(inner: L, epsilon: f64) -> Self {
        Self { inner, epsilon }
    }
}

impl<L: DelayedLagrangian> DelayedLagrangian for FiniteDifferencePartials<L> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn eval(&self, t: f64, state: &[f64], state_lag: &[f64], rate: &[f64], rate_lag: &[f64]) -> f64 {
        self.inner.eval(t, state, state_lag, rate, rate_lag)
    }

    fn partials(&self, t: f64, state: &[f64], state_lag: &[f64], rate: &[f64], rate_lag: &[f64]) -> Partials {
        let n = self.state_dim();
        let mut out = Partials::zeros(n);
        for slot in 0..4 {
            let args: &[f64] = match slot {
                0 => state,
                1 => state_lag,
                2 => rate,
                _ => rate_lag,
            };
            for d in 0..n {
                let mut hi = args.to_vec();
                let mut lo = args.to_vec();
                hi[d] += self.epsilon;
                lo[d] -= self.epsilon;
                let eval_with = |probe: &[f64]| {
                    let a: &[f64] = if slot == 0 { probe } else { state };
                    let b: &[f64] = if slot == 1 { probe } else { state_lag };
                    let c: &[f64] = if slot == 2 { probe } else { rate };
                    let e: &[f64] = if slot == 3 { probe } else { rate_lag };
                    self.inner.eval(t, a, b, c, e)
                };
                let g = (eval_with(&hi) - eval_with(&lo)) / (2.0 * self.epsilon);
                match slot {
                    0 => out.d_state[d] = g,
                    1 => out.d_state_lag[d] = g,
                    2 => out.d_rate[d] = g,
                    _ => out.d_rate_lag[d] = g,
                }
            }
        }
        out
    }

    fn partials_exact(&self) -> bool {
        false
    }
}

/// Gradients of a running cost l(t, state, rate_lag, control).
#[derive(Debug, Clone, PartialEq)]
pub struct CostPartials {
    pub d_state: Vec<f64>,
    pub d_rate_lag: Vec<f64>,
    pub d_control: Vec<f64>,
}

/// Running cost of the control problem.
pub trait RunningCost: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn eval(&self, t: f64, state: &[f64], rate_lag: &[f64], control: &[f64]) -> f64;

    fn partials(&self, t: f64, state: &[f64], rate_lag: &[f64], control: &[f64]) -> CostPartials;

    /// Declared coercivity constant (0 when unknown).
    fn coercivity_rho(&self) -> f64 {
        0.0
    }

    fn partials_exact(&self) -> bool {
        true
    }
}

/// Quadratic running cost
/// l = state' Q state + rate_lag' S rate_lag + control' R control
///   + q_lin . state + s_lin . rate_lag + r_lin . control,
/// with Q, S symmetric PSD and R symmetric PD.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCostSpec {
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_lin: Option<DVector<f64>>,
    pub s_lin: Option<DVector<f64>>,
    pub r_lin: Option<DVector<f64>>,
    /// Declared coercivity constant (0 when unknown).
    pub rho: f64,
}

impl QuadraticCostSpec {
    pub fn diagonal(state_dim: usize, q: f64, s: f64, r: f64, control_dim: usize) -> Self {
        Self {
            q: DMatrix::identity(state_dim, state_dim) * q,
            s: DMatrix::identity(state_dim, state_dim) * s,
            r: DMatrix::identity(control_dim, control_dim) * r,
            q_lin: None,
            s_lin: None,
            r_lin: None,
            rho: 0.0,
        }
    }

    /// Symmetry to 1e-12, Q and S PSD, R PD, dimension consistency.
    pub fn validate(&self, state_dim: usize, control_dim: usize) -> Result<()> {
        let check_shape = |name: &str, m: &DMatrix<f64>, dim: usize| -> Result<()> {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is not symmetric (max asymmetry {asym:.3e})"
                )));
            }
            Ok(())
        };
        check_shape("Q", &self.q, state_dim)?;
        check_shape("S", &self.s, state_dim)?;
        check_shape("R", &self.r, control_dim)?;
        let psd = |name: &str, m: &DMatrix<f64>, strict: bool| -> Result<()> {
            let eig = m.clone().symmetric_eigenvalues();
            let min = eig.min();
            let floor = if strict { 1e-12 } else { -1e-10 };
            if min < floor {
                return Err(Error::DimensionMismatch(format!(
                    "{name} must be {} (min eigenvalue {min:.3e})",
                    if strict { "positive definite" } else { "positive semidefinite" }
                )));
            }
            Ok(())
        };
        psd("Q", &self.q, false)?;
        psd("S", &self.s, false)?;
        psd("R", &self.r, true)?;
        for (name, v, dim) in [
            ("q_lin", &self.q_lin, state_dim),
            ("s_lin", &self.s_lin, state_dim),
            ("r_lin", &self.r_lin, control_dim),
        ] {
            if let Some(v) = v {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} has length {}, expected {dim}",
                        v.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for r in 0..m.nrows() {
        let mut row = 0.0;
        for c in 0..m.ncols() {
            row += m[(r, c)] * x[c];
        }
        acc += x[r] * row;
    }
    acc
}

fn grad_quad(m: &DMatrix<f64>, x: &[f64], lin: &Option<DVector<f64>>, out: &mut [f64]) {
    for r in 0..m.nrows() {
        let mut row = 0.0;
        for c in 0..m.ncols() {
            row += m[(r, c)] * x[c];
        }
        out[r] = 2.0 * row + lin.as_ref().map_or(0.0, |l| l[r]);
    }
}

impl RunningCost for QuadraticCostSpec {
    fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    fn eval(&self, _t: f64, state: &[f64], rate_lag: &[f64], control: &[f64]) -> f64 {
        let dot = |l: &Option<DVector<f64>>, x: &[f64]| {
            l.as_ref()
                .map_or(0.0, |l| l.iter().zip(x).map(|(a, b)| a * b).sum())
        };
        quad_form(&self.q, state)
            + quad_form(&self.s, rate_lag)
            + quad_form(&self.r, control)
            + dot(&self.q_lin, state)
            + dot(&self.s_lin, rate_lag)
            + dot(&self.r_lin, control)
    }

    fn partials(&self, _t: f64, state: &[f64], rate_lag: &[f64], control: &[f64]) -> CostPartials {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut out = CostPartials {
            d_state: vec![0.0; n],
            d_rate_lag: vec![0.0; n],
            d_control: vec![0.0; m],
        };
        grad_quad(&self.q, state, &self.q_lin, &mut out.d_state);
        grad_quad(&self.s, rate_lag, &self.s_lin, &mut out.d_rate_lag);
        grad_quad(&self.r, control, &self.r_lin, &mut out.d_control);
        out
    }

    fn coercivity_rho(&self) -> f64 {
        self.rho
    }
}

/// Gradients of the penalized integrand, including the control slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPartials {
    pub d_state: Vec<f64>,
    pub d_state_lag: Vec<f64>,
    pub d_rate: Vec<f64>,
    pub d_rate_lag: Vec<f64>,
    pub d_control: Vec<f64>,
}

/// Running cost plus a quadratic penalty on the dynamics defect
/// rate - A state_lag - B control.
///
/// The defect uses the minus sign of the dynamics equation throughout.
pub struct PenalizedLagrangian {
    cost: Arc<dyn RunningCost>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    weight: f64,
}

/// Builds the penalized integrand
/// `cost(t, state, rate_lag, control) + (weight/2) |defect|^2`.
///
/// A zero weight reproduces the bare cost exactly; negative or
/// non-finite weights are rejected.
pub fn make_penalized(
    cost: Arc<dyn RunningCost>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    weight: f64,
) -> Result<PenalizedLagrangian> {
    if !weight.is_finite() || weight < 0.0 {
        return Err(Error::NonPositivePenalty(weight));
    }
    let n = cost.state_dim();
    let m = cost.control_dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, expected {n}x{n}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != n || b.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "B is {}x{}, expected {n}x{m}",
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(PenalizedLagrangian { cost, a, b, weight })
}

impl PenalizedLagrangian {
    pub fn state_dim(&self) -> usize {
        self.cost.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.cost.control_dim()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn partials_exact(&self) -> bool {
        self.cost.partials_exact()
    }

    /// Dynamics defect rate - A state_lag - B control.
    pub fn defect(&self, state_lag: &[f64], rate: &[f64], control: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let mut r = rate.to_vec();
        for i in 0..n {
            for j in 0..n {
                r[i] -= self.a[(i, j)] * state_lag[j];
            }
            for j in 0..self.control_dim() {
                r[i] -= self.b[(i, j)] * control[j];
            }
        }
        r
    }

    pub fn eval(
        &self,
        t: f64,
        state: &[f64],
        state_lag: &[f64],
        rate: &[f64],
        rate_lag: &[f64],
        control: &[f64],
    ) -> f64 {
        let defect = self.defect(state_lag, rate, control);
        let penalty: f64 = defect.iter().map(|v| v * v).sum();
        self.cost.eval(t, state, rate_lag, control) + 0.5 * self.weight * penalty
    }

    pub fn partials(
        &self,
        t: f64,
        state: &[f64],
        state_lag: &[f64],
        rate: &[f64],
        rate_lag: &[f64],
        control: &[f64],
    ) -> ControlPartials {
        let n = self.state_dim();
        let m = self.control_dim();
        let cost = self.cost.partials(t, state, rate_lag, control);
        let defect = self.defect(state_lag, rate, control);

        let mut d_state_lag = vec![0.0; n];
        let mut d_control = cost.d_control;
        let mut d_rate = vec![0.0; n];
        for i in 0..n {
            d_rate[i] = self.weight * defect[i];
            for j in 0..n {
                // -weight * A^T defect
                d_state_lag[j] -= self.weight * self.a[(i, j)] * defect[i];
            }
            for j in 0..m {
                // -weight * B^T defect
                d_control[j] -= self.weight * self.b[(i, j)] * defect[i];
            }
        }
        ControlPartials {
            d_state: cost.d_state,
            d_state_lag,
            d_rate,
            d_rate_lag: cost.d_rate_lag,
            d_control,
        }
    }
}

/// Samples the coercivity inequality cost >= rho |control| over random
/// arguments with |control| inside the given band. Returns the worst
/// margin (negative means a violation was found).
pub fn coercivity_margin<F>(
    cost: &dyn RunningCost,
    rho: f64,
    samples: usize,
    control_norm_band: (f64, f64),
    mut random: F,
) -> f64
where
    F: FnMut() -> f64,
{
    let n = cost.state_dim();
    let m = cost.control_dim();
    let mut worst = f64::INFINITY;
    for k in 0..samples {
        let state: Vec<f64> = (0..n).map(|_| random()).collect();
        let rate_lag: Vec<f64> = (0..n).map(|_| random()).collect();
        let mut control: Vec<f64> = (0..m).map(|_| random()).collect();
        let norm: f64 = control.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let (lo, hi) = control_norm_band;
            let target = lo + (hi - lo) * (k as f64 / samples.max(1) as f64);
            for v in &mut control {
                *v *= target / norm;
            }
        }
        let cnorm: f64 = control.iter().map(|v| v * v).sum::<f64>().sqrt();
        let margin = cost.eval(0.0, &state, &rate_lag, &control) - rho * cnorm;
        worst = worst.min(margin);
    }
    worst
}
