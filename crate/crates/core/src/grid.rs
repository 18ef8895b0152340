//! Uniform mesh on [-tau1, horizon] in which both delays are exact
//! integer multiples of the step.
//!
//! All node coordinates are exact rationals; a delayed evaluation
//! `x(t - tau)` is a plain index shift, so there is no interpolation
//! error anywhere in the delayed terms and the regime boundaries
//! `horizon - tau1`, `horizon - tau2` land exactly on nodes.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::rational::{rat_gcd, to_f64, Rat};

/// Which of the two delays to shift by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelaySelector {
    /// The state delay (the larger one).
    Tau1,
    /// The derivative delay (the smaller one).
    Tau2,
}

/// Immutable after construction; freely shared across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayGrid {
    step_h: Rat,
    horizon: Rat,
    tau1: Rat,
    tau2: Rat,
    /// tau1 / h
    k1: usize,
    /// tau2 / h
    k2: usize,
    /// Number of nodes in [-tau1, 0), equal to `k1`.
    n_history: usize,
    /// Number of nodes in [0, horizon], inclusive on both ends.
    n_main: usize,
    nodes: Vec<Rat>,
}

impl DelayGrid {
    pub fn step(&self) -> Rat {
        self.step_h
    }

    pub fn step_f64(&self) -> f64 {
        to_f64(self.step_h)
    }

    pub fn horizon(&self) -> Rat {
        self.horizon
    }

    pub fn tau1(&self) -> Rat {
        self.tau1
    }

    pub fn tau2(&self) -> Rat {
        self.tau2
    }

    pub fn k1(&self) -> usize {
        self.k1
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    pub fn n_history(&self) -> usize {
        self.n_history
    }

    pub fn n_main(&self) -> usize {
        self.n_main
    }

    /// Total node count over [-tau1, horizon].
    pub fn n_total(&self) -> usize {
        self.n_history + self.n_main
    }

    /// Exact time of a global node.
    pub fn node(&self, global: usize) -> Rat {
        self.nodes[global]
    }

    pub fn nodes(&self) -> &[Rat] {
        &self.nodes
    }

    /// Global index of main node `i` (main node 0 sits at t = 0).
    pub fn global_of_main(&self, i: usize) -> usize {
        self.n_history + i
    }

    /// Time of main node `i` as a float.
    pub fn main_time_f64(&self, i: usize) -> f64 {
        to_f64(self.nodes[self.n_history + i])
    }

    /// Global index of the terminal node.
    pub fn last(&self) -> usize {
        self.n_total() - 1
    }

    /// Global index of the node at `t_i - tau` for main node `i`.
    ///
    /// Always lands on the grid because the history segment covers
    /// exactly one state delay.
    pub fn shifted_index(&self, i: usize, which: DelaySelector) -> Result<usize> {
        if i >= self.n_main {
            return Err(Error::IndexOutOfRange(format!(
                "main node {i} out of range (n_main = {})",
                self.n_main
            )));
        }
        let k = match which {
            DelaySelector::Tau1 => self.k1,
            DelaySelector::Tau2 => self.k2,
        };
        Ok(self.n_history + i - k)
    }
}

/// Builds the coarsest grid with step at most `h_target` such that the
/// step divides tau1, tau2 and the horizon exactly.
///
/// With `g` the rational gcd of the three times, the step is
/// `g / ceil(g / h_target)`.
pub fn build_grid(horizon: Rat, tau1: Rat, tau2: Rat, h_target: Rat) -> Result<DelayGrid> {
    for (name, v) in [
        ("horizon", horizon),
        ("tau1", tau1),
        ("tau2", tau2),
        ("h_target", h_target),
    ] {
        if v <= Rat::zero() {
            return Err(Error::NonPositive(format!("{name} = {v} must be > 0")));
        }
    }
    if tau2 >= tau1 {
        return Err(Error::OrderViolation(format!(
            "tau2 = {tau2} must be < tau1 = {tau1}"
        )));
    }
    if tau1 >= horizon {
        return Err(Error::OrderViolation(format!(
            "tau1 = {tau1} must be < horizon = {horizon}"
        )));
    }

    let g = rat_gcd(rat_gcd(tau1, tau2)?, horizon)?;
    let q = (g / h_target).ceil().to_integer();
    let h = g / Rat::from_integer(q);

    let k1 = exact_multiple(tau1, h)?;
    let k2 = exact_multiple(tau2, h)?;
    let main_steps = exact_multiple(horizon, h)?;
    let n_history = k1;
    let n_main = main_steps + 1;

    let mut nodes = Vec::with_capacity(n_history + n_main);
    for j in 0..(n_history + n_main) {
        nodes.push(-tau1 + Rat::from_integer(j as i64) * h);
    }
    debug_assert!(nodes[n_history].is_zero());
    debug_assert_eq!(nodes[n_history + n_main - 1], horizon);

    Ok(DelayGrid {
        step_h: h,
        horizon,
        tau1,
        tau2,
        k1,
        k2,
        n_history,
        n_main,
        nodes,
    })
}

fn exact_multiple(value: Rat, h: Rat) -> Result<usize> {
    let q = value / h;
    if !q.is_integer() || q < Rat::zero() {
        return Err(Error::NonCommensurate(format!(
            "{value} is not a nonnegative integer multiple of step {h}"
        )));
    }
    Ok(q.to_integer() as usize)
}
