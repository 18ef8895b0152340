//! Projected first-order descent with Armijo backtracking.
//!
//! The decision vector holds only the free coordinates, so every
//! iterate satisfies the affine pins exactly; no explicit projection is
//! needed during the line search.

use serde::Serialize;

use crate::error::{Error, Result};

/// A smooth objective over a flat decision vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    fn gradient_into(&mut self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Serialize)]
pub struct InnerOptions {
    /// Stop when the gradient norm over the free coordinates drops
    /// below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    /// Warm-start each line search from a Barzilai-Borwein step length
    /// instead of `initial_step`. Armijo still guards every step.
    pub bb_warm_start: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 50_000,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            bb_warm_start: false,
        }
    }
}

impl InnerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::InvalidOptions(
                "grad_tol and initial_step must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidOptions("max_iters must be >= 1".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidOptions(format!(
                "armijo_c = {} must lie strictly inside (0, 1)",
                self.armijo_c
            )));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidOptions(format!(
                "backtrack_factor = {} must lie strictly inside (0, 1)",
                self.backtrack_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InnerReport {
    pub iterations: usize,
    pub final_value: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Objective after each accepted step, starting at the initial
    /// point; nonincreasing by construction.
    pub value_history: Vec<f64>,
}

const STEP_FLOOR: f64 = 1e-16;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest tested step `initial * factor^k` satisfying the Armijo
/// sufficient-decrease condition. Non-finite trial values shrink the
/// step like a failed test.
///
/// For steps that barely move the point, the acceptance threshold
/// carries a few-ulp slack: once the true decrease per step falls
/// below the rounding noise of the objective, a strict comparison
/// would reject genuine contraction steps and the iteration would
/// stall well above the gradient tolerance. Large steps stay under
/// the strict test, otherwise noise-level acceptances could fling the
/// iterate around on stiff objectives.
fn backtrack(
    obj: &mut dyn Objective,
    x: &[f64],
    f_x: f64,
    g_dot_d: f64,
    direction: &[f64],
    first_step: f64,
    opts: &InnerOptions,
    trial: &mut Vec<f64>,
) -> Result<(f64, f64)> {
    if !(g_dot_d < 0.0) {
        return Err(Error::LineSearchFailure(format!(
            "not a descent direction (directional derivative {g_dot_d:.3e})"
        )));
    }
    let noise_slack = 4.0 * f64::EPSILON * f_x.abs();
    let d_norm = norm(direction);
    let tiny_move = 1e-7 * (1.0 + norm(x));
    let mut step = first_step;
    while step >= STEP_FLOOR {
        trial.clear();
        trial.extend(x.iter().zip(direction).map(|(xi, di)| xi + step * di));
        let f_trial = obj.value(trial)?;
        let slack = if step * d_norm <= tiny_move { noise_slack } else { 0.0 };
        if f_trial.is_finite() && f_trial <= f_x + opts.armijo_c * step * g_dot_d + slack {
            return Ok((step, f_trial));
        }
        step *= opts.backtrack_factor;
    }
    Err(Error::LineSearchFailure(format!(
        "no Armijo step above {STEP_FLOOR:.0e}"
    )))
}

/// Armijo backtracking from `opts.initial_step` along `direction`.
pub fn line_search(
    obj: &mut dyn Objective,
    point: &[f64],
    direction: &[f64],
    opts: &InnerOptions,
) -> Result<f64> {
    opts.validate()?;
    let f_x = obj.value(point)?;
    if !f_x.is_finite() {
        return Err(Error::NonFiniteValue(format!("objective value {f_x}")));
    }
    let mut g = vec![0.0; point.len()];
    obj.gradient_into(point, &mut g)?;
    let mut trial = Vec::with_capacity(point.len());
    let (step, _) = backtrack(
        obj,
        point,
        f_x,
        dot(&g, direction),
        direction,
        opts.initial_step,
        opts,
        &mut trial,
    )?;
    Ok(step)
}

/// Steepest descent with Armijo backtracking (optionally BB-seeded).
///
/// Returns the final point and a report; `converged` is false when the
/// iteration budget ran out first.
pub fn minimize(
    obj: &mut dyn Objective,
    init: &[f64],
    opts: &InnerOptions,
) -> Result<(Vec<f64>, InnerReport)> {
    opts.validate()?;
    if init.len() != obj.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial point has length {}, objective dimension is {}",
            init.len(),
            obj.dim()
        )));
    }
    let mut x = init.to_vec();
    let mut f = obj.value(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteValue(format!(
            "objective value {f} at the initial point"
        )));
    }
    let mut g = vec![0.0; x.len()];
    obj.gradient_into(&x, &mut g)?;
    let mut gnorm = norm(&g);
    let mut history = vec![f];

    let mut prev_x: Option<Vec<f64>> = None;
    let mut prev_g: Option<Vec<f64>> = None;
    let mut trial = Vec::with_capacity(x.len());
    let mut iterations = 0;

    while gnorm > opts.grad_tol && iterations < opts.max_iters {
        let direction: Vec<f64> = g.iter().map(|v| -v).collect();
        let g_dot_d = -gnorm * gnorm;

        let mut first_step = opts.initial_step;
        if opts.bb_warm_start {
            if let (Some(px), Some(pg)) = (&prev_x, &prev_g) {
                let mut sty = 0.0;
                let mut sts = 0.0;
                for i in 0..x.len() {
                    let s = x[i] - px[i];
                    let y = g[i] - pg[i];
                    sty += s * y;
                    sts += s * s;
                }
                if sty > 0.0 && sts > 0.0 {
                    first_step = (sts / sty).clamp(1e-12, 1e12);
                }
            }
        }

        let (step, f_new) = backtrack(obj, &x, f, g_dot_d, &direction, first_step, opts, &mut trial)?;
        prev_x = Some(x.clone());
        prev_g = Some(g.clone());
        for i in 0..x.len() {
            x[i] += step * direction[i];
        }
        f = f_new;
        obj.gradient_into(&x, &mut g)?;
        gnorm = norm(&g);
        history.push(f);
        iterations += 1;
    }

    let converged = gnorm <= opts.grad_tol;
    Ok((
        x,
        InnerReport {
            iterations,
            final_value: f,
            final_grad_norm: gnorm,
            converged,
            value_history: history,
        },
    ))
}
