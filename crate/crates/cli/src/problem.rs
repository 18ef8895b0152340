//! Declarative problem files: a single self-describing JSON document
//! for both problem kinds, with exact rational times.
//!
//! Times accept decimal strings ("0.25"), fraction strings ("1/3") or
//! plain JSON numbers (snapped to the nearest simple rational);
//! serialization always emits the canonical string form, so
//! parse -> serialize -> parse is a fixpoint.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use delvar_core::descent::InnerOptions;
use delvar_core::grid::{build_grid, DelayGrid};
use delvar_core::lagrangian::{QuadraticCostSpec, QuadraticLagrangian};
use delvar_core::penalty::{ControlProblem, PenaltyConfig};
use delvar_core::rational::{format_rat, parse_rat, rat_from_f64, Rat};
use delvar_core::trajectory::{HistorySpec, PolyPiece};
use delvar_core::variational::VariationalProblem;

#[derive(Debug)]
pub enum CliError {
    Io(std::io::Error),
    /// Malformed document, with serde's line/column context.
    Parse(String),
    /// A well-formed document that violates an invariant; names the
    /// offending field and the rule it broke.
    Validation { field: String, rule: String },
    Core(delvar_core::Error),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Parse(e) => write!(f, "parse error: {e}"),
            CliError::Validation { field, rule } => write!(f, "invalid `{field}`: {rule}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<delvar_core::Error> for CliError {
    fn from(e: delvar_core::Error) -> Self {
        CliError::Core(e)
    }
}

fn invalid(field: &str, rule: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        rule: rule.into(),
    }
}

/// Exact rational time value with canonical string serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatValue(pub Rat);

impl From<Rat> for RatValue {
    fn from(r: Rat) -> Self {
        RatValue(r)
    }
}

impl Serialize for RatValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_rat(self.0))
    }
}

struct RatVisitor;

impl Visitor<'_> for RatVisitor {
    type Value = RatValue;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a rational as \"p/q\", a decimal string, or a number")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<RatValue, E> {
        parse_rat(v).map(RatValue).map_err(E::custom)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<RatValue, E> {
        rat_from_f64(v).map(RatValue).map_err(E::custom)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<RatValue, E> {
        Ok(RatValue(Rat::from_integer(v)))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<RatValue, E> {
        i64::try_from(v)
            .map(|v| RatValue(Rat::from_integer(v)))
            .map_err(|_| E::custom("integer too large"))
    }
}

impl<'de> Deserialize<'de> for RatValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(RatVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Variational,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceFile {
    pub start: RatValue,
    pub end: RatValue,
    /// One coefficient row per state dimension, ascending powers of t.
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryFile {
    /// Shorthand: a constant history over both segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<Vec<PieceFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<Vec<PieceFile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsFile {
    /// Row-major state matrix (N x N).
    pub a: Vec<Vec<f64>>,
    /// Row-major input matrix (N x m).
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    pub q: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_lin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_lin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_lin: Option<Vec<f64>>,
    /// Declared coercivity constant (0 when unknown).
    #[serde(default)]
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotWeights {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_lag: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_lag: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianFile {
    /// Built-in family name; only "quadratic" is defined.
    pub name: String,
    /// Full 4N x 4N symmetric weight matrix over
    /// [state, lagged state, rate, lagged rate].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<Vec<Vec<f64>>>,
    /// Alternative: one N x N block per argument slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<SlotWeights>,
    /// Linear term over the stacked 4N argument.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lin: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub h_target: RatValue,
}

impl Default for MeshFile {
    fn default() -> Self {
        Self {
            h_target: RatValue(Rat::new(1, 20)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerFile {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub bb_warm_start: bool,
}

impl Default for InnerFile {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 50_000,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            bb_warm_start: true,
        }
    }
}

impl InnerFile {
    pub fn to_options(&self) -> InnerOptions {
        InnerOptions {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            armijo_c: self.armijo_c,
            backtrack_factor: self.backtrack_factor,
            initial_step: self.initial_step,
            bb_warm_start: self.bb_warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyFile {
    pub c_start: f64,
    pub growth: f64,
    pub stages: usize,
    pub dyn_residual_tol: f64,
    pub inner: InnerFile,
}

impl Default for PenaltyFile {
    fn default() -> Self {
        Self {
            c_start: 10.0,
            growth: 10.0,
            stages: 5,
            dyn_residual_tol: 1e-3,
            inner: InnerFile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub kind: ProblemKind,
    pub state_dim: usize,
    #[serde(default)]
    pub control_dim: usize,
    pub horizon: RatValue,
    pub tau1: RatValue,
    pub tau2: RatValue,
    pub history: HistoryFile,
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrangian: Option<LagrangianFile>,
    #[serde(default)]
    pub mesh: MeshFile,
    #[serde(default)]
    pub penalty: PenaltyFile,
    #[serde(default)]
    pub seed: u64,
}

/// Parses and fully validates a problem file.
pub fn parse_problem_file(path: &Path) -> Result<ProblemFile, CliError> {
    let text = std::fs::read_to_string(path)?;
    parse_problem_str(&text)
}

pub fn parse_problem_str(text: &str) -> Result<ProblemFile, CliError> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    file.validate()?;
    Ok(file)
}

pub fn serialize_problem(file: &ProblemFile) -> String {
    // Stable field order comes from the struct definition.
    serde_json::to_string_pretty(file).expect("problem files always serialize")
}

fn matrix_from_rows(field: &str, rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(invalid(field, format!("must be a {nr}x{nc} matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl ProblemFile {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.state_dim == 0 {
            return Err(invalid("state_dim", "must be >= 1"));
        }
        let (t, tau1, tau2) = (self.horizon.0, self.tau1.0, self.tau2.0);
        if tau2 <= Rat::from_integer(0) {
            return Err(invalid("tau2", "must be > 0"));
        }
        if tau2 >= tau1 {
            return Err(invalid("tau2", "must be < tau1"));
        }
        if tau1 >= t {
            return Err(invalid("tau1", "must be < horizon"));
        }
        if self.mesh.h_target.0 <= Rat::from_integer(0) {
            return Err(invalid("mesh.h_target", "must be > 0"));
        }
        if self.alpha.len() != self.state_dim {
            return Err(invalid("alpha", format!("must have length {}", self.state_dim)));
        }
        self.validate_history()?;
        match self.kind {
            ProblemKind::Control => {
                if self.control_dim == 0 {
                    return Err(invalid("control_dim", "must be >= 1 for control problems"));
                }
                if self.lagrangian.is_some() {
                    return Err(invalid("lagrangian", "not allowed for control problems"));
                }
                let dynamics = self
                    .dynamics
                    .as_ref()
                    .ok_or_else(|| invalid("dynamics", "required for control problems"))?;
                let n = self.state_dim;
                let m = self.control_dim;
                matrix_from_rows("dynamics.a", &dynamics.a, n, n)?;
                matrix_from_rows("dynamics.b", &dynamics.b, n, m)?;
                let cost = self
                    .cost
                    .as_ref()
                    .ok_or_else(|| invalid("cost", "required for control problems"))?;
                if cost.rho < 0.0 {
                    return Err(invalid("cost.rho", "must be >= 0"));
                }
                let spec = self.cost_spec()?;
                spec.validate(n, m)
                    .map_err(|e| invalid("cost", e.to_string()))?;
                self.validate_penalty()?;
            }
            ProblemKind::Variational => {
                if self.dynamics.is_some() {
                    return Err(invalid("dynamics", "not allowed for variational problems"));
                }
                if self.cost.is_some() {
                    return Err(invalid("cost", "not allowed for variational problems"));
                }
                self.build_lagrangian()?;
                // Inner options still apply to the variational solve.
                self.penalty
                    .inner
                    .to_options()
                    .validate()
                    .map_err(|e| invalid("penalty.inner", e.to_string()))?;
            }
        }
        Ok(())
    }

    fn validate_history(&self) -> Result<(), CliError> {
        let h = &self.history;
        match (&h.constant, &h.theta1, &h.theta2) {
            (Some(c), None, None) => {
                if c.len() != self.state_dim {
                    return Err(invalid(
                        "history.constant",
                        format!("must have length {}", self.state_dim),
                    ));
                }
                Ok(())
            }
            (None, Some(_), Some(_)) => {
                let spec = self.build_history()?;
                spec.validate_domains(self.tau1.0, self.tau2.0)
                    .map_err(|e| invalid("history", e.to_string()))?;
                Ok(())
            }
            _ => Err(invalid(
                "history",
                "give either `constant` or both `theta1` and `theta2`",
            )),
        }
    }

    fn validate_penalty(&self) -> Result<(), CliError> {
        self.penalty_config()
            .validate()
            .map_err(|e| invalid("penalty", e.to_string()))
    }

    pub fn build_history(&self) -> Result<HistorySpec, CliError> {
        if let Some(c) = &self.history.constant {
            if c.len() != self.state_dim {
                return Err(invalid(
                    "history.constant",
                    format!("must have length {}", self.state_dim),
                ));
            }
            return Ok(HistorySpec::constant(self.tau1.0, self.tau2.0, c));
        }
        let to_pieces = |field: &str, pieces: &[PieceFile]| -> Result<Vec<PolyPiece>, CliError> {
            pieces
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    if p.coeffs.len() != self.state_dim {
                        return Err(invalid(
                            &format!("{field}[{k}].coeffs"),
                            format!("must have {} rows", self.state_dim),
                        ));
                    }
                    Ok(PolyPiece {
                        start: p.start.0,
                        end: p.end.0,
                        coeffs: p.coeffs.clone(),
                    })
                })
                .collect()
        };
        let theta1 = to_pieces(
            "history.theta1",
            self.history.theta1.as_deref().unwrap_or(&[]),
        )?;
        let theta2 = to_pieces(
            "history.theta2",
            self.history.theta2.as_deref().unwrap_or(&[]),
        )?;
        HistorySpec::new(theta1, theta2, self.state_dim)
            .map_err(|e| invalid("history", e.to_string()))
    }

    pub fn build_grid(&self, mesh_override: Option<Rat>) -> Result<Arc<DelayGrid>, CliError> {
        let h_target = mesh_override.unwrap_or(self.mesh.h_target.0);
        Ok(Arc::new(build_grid(
            self.horizon.0,
            self.tau1.0,
            self.tau2.0,
            h_target,
        )?))
    }

    pub fn cost_spec(&self) -> Result<QuadraticCostSpec, CliError> {
        let cost = self
            .cost
            .as_ref()
            .ok_or_else(|| invalid("cost", "required for control problems"))?;
        let n = self.state_dim;
        let m = self.control_dim;
        Ok(QuadraticCostSpec {
            q: matrix_from_rows("cost.q", &cost.q, n, n)?,
            s: matrix_from_rows("cost.s", &cost.s, n, n)?,
            r: matrix_from_rows("cost.r", &cost.r, m, m)?,
            q_lin: cost.q_lin.as_ref().map(|v| DVector::from_row_slice(v)),
            s_lin: cost.s_lin.as_ref().map(|v| DVector::from_row_slice(v)),
            r_lin: cost.r_lin.as_ref().map(|v| DVector::from_row_slice(v)),
            rho: cost.rho,
        })
    }

    pub fn build_lagrangian(&self) -> Result<QuadraticLagrangian, CliError> {
        let lag = self
            .lagrangian
            .as_ref()
            .ok_or_else(|| invalid("lagrangian", "required for variational problems"))?;
        if lag.name != "quadratic" {
            return Err(invalid(
                "lagrangian.name",
                format!("unknown built-in `{}`; available: quadratic", lag.name),
            ));
        }
        let n = self.state_dim;
        let dim = 4 * n;
        let lin = match &lag.lin {
            Some(v) => {
                if v.len() != dim {
                    return Err(invalid("lagrangian.lin", format!("must have length {dim}")));
                }
                Some(v.clone())
            }
            None => None,
        };
        match (&lag.full, &lag.weights) {
            (Some(rows), None) => {
                let w = matrix_from_rows("lagrangian.full", rows, dim, dim)?;
                QuadraticLagrangian::new(n, w.transpose().as_slice().to_vec(), lin.unwrap_or_else(|| vec![0.0; dim]), 0.0)
                    .map_err(|e| invalid("lagrangian.full", e.to_string()))
            }
            (None, Some(slots)) => {
                let block = |field: &str, rows: &Option<Vec<Vec<f64>>>| -> Result<Option<Vec<f64>>, CliError> {
                    match rows {
                        Some(rows) => {
                            let m = matrix_from_rows(field, rows, n, n)?;
                            Ok(Some(m.transpose().as_slice().to_vec()))
                        }
                        None => Ok(None),
                    }
                };
                let state = block("lagrangian.weights.state", &slots.state)?;
                let state_lag = block("lagrangian.weights.state_lag", &slots.state_lag)?;
                let rate = block("lagrangian.weights.rate", &slots.rate)?;
                let rate_lag = block("lagrangian.weights.rate_lag", &slots.rate_lag)?;
                QuadraticLagrangian::from_slots(
                    n,
                    [
                        state.as_deref(),
                        state_lag.as_deref(),
                        rate.as_deref(),
                        rate_lag.as_deref(),
                    ],
                    lin,
                )
                .map_err(|e| invalid("lagrangian.weights", e.to_string()))
            }
            _ => Err(invalid(
                "lagrangian",
                "give exactly one of `full` or `weights`",
            )),
        }
    }

    pub fn build_variational(&self, grid: Arc<DelayGrid>) -> Result<VariationalProblem, CliError> {
        let lagrangian = Arc::new(self.build_lagrangian()?);
        let history = self.build_history()?;
        Ok(VariationalProblem::new(
            grid,
            lagrangian,
            history,
            self.alpha.clone(),
        )?)
    }

    pub fn build_control(&self, grid: Arc<DelayGrid>) -> Result<(ControlProblem, QuadraticCostSpec), CliError> {
        let dynamics = self
            .dynamics
            .as_ref()
            .ok_or_else(|| invalid("dynamics", "required for control problems"))?;
        let n = self.state_dim;
        let m = self.control_dim;
        let a = matrix_from_rows("dynamics.a", &dynamics.a, n, n)?;
        let b = matrix_from_rows("dynamics.b", &dynamics.b, n, m)?;
        let spec = self.cost_spec()?;
        let history = self.build_history()?;
        let prob = ControlProblem::new(
            grid,
            a,
            b,
            Arc::new(spec.clone()),
            history,
            self.alpha.clone(),
        )?;
        Ok((prob, spec))
    }

    pub fn penalty_config(&self) -> PenaltyConfig {
        PenaltyConfig {
            c_start: self.penalty.c_start,
            growth: self.penalty.growth,
            stages: self.penalty.stages,
            inner: self.penalty.inner.to_options(),
            dyn_residual_tol: self.penalty.dyn_residual_tol,
        }
    }
}
