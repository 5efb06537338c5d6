//! The two dual solvers: a box-constrained limited-memory quasi-Newton
//! method and an inexact smoothing Newton method on the root equation
//! `E(ε, u) = [ε; F̃(ε, u)] = 0`, sharing the stopping rule on the relative
//! change of the dual objective.

mod krylov;
mod qn;
mod sn;

pub use krylov::{bicgstab, cg, KrylovOutcome};
pub use qn::solve_qn;
pub use sn::{
    jacobian_eps, jacobian_vec, newton_step, smooth_f, smooth_point, solve_sn, NewtonStep,
    SmoothPoint,
};

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::dual::{BoundPair, EigRoute};
use crate::error::{Error, Result};
use crate::linalg::PsdFactor;
use crate::model::{ConstraintKind, SdpProblem};

/// Shared stopping tolerance: relative change of `d_γ` between successive
/// iterates, `10⁷` times machine epsilon.
pub const DEFAULT_TOL: f64 = 1e7 * f64::EPSILON;

#[derive(Debug, Clone)]
pub struct QnConfig {
    /// Number of curvature pairs kept by the two-loop recursion.
    pub memory: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Curvature threshold used when deciding whether to store a pair.
    pub curvature: f64,
    pub max_line_search: usize,
    pub eig_route: EigRoute,
    pub lanczos_tol: f64,
    pub seed: u64,
    /// Shift the diagonal duals of a cold start so that `C(u₀) ⪯ 0` on the
    /// Lanczos route, keeping the projected rank small from the start.
    pub shift_start: bool,
    /// When set, the relative-change rule alone does not stop the solver:
    /// the projected-gradient sup norm must also fall below this value.
    /// `∇d` is the primal constraint residual, so this bounds how accurate
    /// the recovered `X*` is.
    pub grad_tol: Option<f64>,
    pub deadline: Option<Instant>,
}

impl Default for QnConfig {
    fn default() -> Self {
        QnConfig {
            memory: 10,
            max_iters: 500,
            tol: DEFAULT_TOL,
            armijo: 1e-4,
            curvature: 0.9,
            max_line_search: 40,
            eig_route: EigRoute::Auto,
            lanczos_tol: 1e-10,
            seed: 0,
            shift_start: true,
            grad_tol: None,
            deadline: None,
        }
    }
}

impl QnConfig {
    /// Settings for oracle-grade solves: the stopping rule additionally
    /// requires a tiny projected gradient, so `X*` is primal-accurate.
    pub fn high_accuracy() -> Self {
        QnConfig {
            tol: 1e-13,
            max_iters: 5000,
            grad_tol: Some(1e-8),
            ..QnConfig::default()
        }
    }
}

impl QnConfig {
    /// Applies a `key=value` setting; returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |k: &str, v: &str| Error::InvalidArgument(format!("bad value for {k}: {v}"));
        match key {
            "memory" => self.memory = value.parse().map_err(|_| bad(key, value))?,
            "max_iters" => self.max_iters = value.parse().map_err(|_| bad(key, value))?,
            "tol" => self.tol = value.parse().map_err(|_| bad(key, value))?,
            "armijo" => self.armijo = value.parse().map_err(|_| bad(key, value))?,
            "curvature" => self.curvature = value.parse().map_err(|_| bad(key, value))?,
            "shift_start" => self.shift_start = value.parse().map_err(|_| bad(key, value))?,
            "lanczos_tol" => self.lanczos_tol = value.parse().map_err(|_| bad(key, value))?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone)]
pub struct SnConfig {
    /// Initial smoothing parameter.
    pub eps0: f64,
    /// Smoothing reduction factor in (0, 1).
    pub mu: f64,
    /// Line-search backtracking factor in (0, 1).
    pub rho: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Additional stop: `‖E‖∞` below this means the root equation is solved.
    pub e_inf_tol: f64,
    pub max_line_search: usize,
    pub max_inner_iters: usize,
    pub deadline: Option<Instant>,
}

impl Default for SnConfig {
    fn default() -> Self {
        SnConfig {
            eps0: 1.0,
            mu: 0.2,
            rho: 0.5,
            max_iters: 50,
            tol: DEFAULT_TOL,
            e_inf_tol: 1e-9,
            max_line_search: 30,
            max_inner_iters: 400,
            deadline: None,
        }
    }
}

impl SnConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |k: &str, v: &str| Error::InvalidArgument(format!("bad value for {k}: {v}"));
        match key {
            "eps0" => self.eps0 = value.parse().map_err(|_| bad(key, value))?,
            "mu" => self.mu = value.parse().map_err(|_| bad(key, value))?,
            "rho" => self.rho = value.parse().map_err(|_| bad(key, value))?,
            "max_iters" => self.max_iters = value.parse().map_err(|_| bad(key, value))?,
            "tol" => self.tol = value.parse().map_err(|_| bad(key, value))?,
            "e_inf_tol" => self.e_inf_tol = value.parse().map_err(|_| bad(key, value))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidArgument(format!("mu must lie in (0,1), got {}", self.mu)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if self.eps0 <= 0.0 {
            return Err(Error::InvalidArgument(format!("eps0 must be > 0, got {}", self.eps0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Termination {
    Converged,
    MaxIters,
    LineSearchFailure,
    InnerSolverFailure,
    TimedOut,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line_search_failure",
            Termination::InnerSolverFailure => "inner_solver_failure",
            Termination::TimedOut => "timeout",
        };
        f.write_str(s)
    }
}

/// Per-accepted-iteration eigensolver accounting.
#[derive(Debug, Clone, Copy, Default)]
pub struct EigIterStat {
    /// Positive rank of the projection at the accepted iterate.
    pub rank: usize,
    /// Matrix-vector products spent during the whole outer iteration
    /// (including line-search trials).
    pub matvecs: usize,
    /// Largest eigenpair count requested from the Lanczos process.
    pub requested: usize,
    /// True when the iteration fell back to a plain gradient step.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u_star: DVector<f64>,
    pub x_star: PsdFactor,
    /// Final dual objective (on the normalized scale).
    pub d_star: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// `d_γ(u_k)` at every accepted iterate, starting from `u₀`.
    pub d_trace: Vec<f64>,
    /// `‖E(ε_k, u_k)‖²` at every accepted iterate (smoothing Newton only).
    pub merit_trace: Vec<f64>,
    pub eig_stats: Vec<EigIterStat>,
    /// Total dual-function evaluations, line-search trials included.
    pub dual_evals: usize,
    pub wall_time: Duration,
    pub bounds: BoundPair,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Default dual start: 0 on equality indices, a small positive value on
/// inequality indices.
pub fn default_start(p: &SdpProblem) -> DVector<f64> {
    DVector::from_fn(p.num_constraints(), |i, _| match p.kinds[i] {
        ConstraintKind::Eq => 0.0,
        ConstraintKind::Ineq => 1e-6,
    })
}

/// Projects onto the dual box (`uᵢ ≥ 0` on inequality indices).
pub(crate) fn project_box(p: &SdpProblem, u: &mut DVector<f64>) {
    for i in 0..u.len() {
        if p.kinds[i] == ConstraintKind::Ineq && u[i] < 0.0 {
            u[i] = 0.0;
        }
    }
}

pub(crate) fn deadline_hit(deadline: &Option<Instant>) -> bool {
    deadline.map(|d| Instant::now() >= d).unwrap_or(false)
}

/// Relative-change stopping rule shared by both solvers (Step 1.4).
pub(crate) fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / new.abs().max(old.abs()).max(1.0)
}

/// Parses a plain-text `key=value` config file; `#` starts a comment.
pub fn parse_config_file(path: &std::path::Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected key=value, got {line:?}"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
