//! Solver toolkit for binary quadratic programs via a quadratically
//! regularized semidefinite relaxation: two dual solvers (box-constrained
//! quasi-Newton and inexact smoothing Newton), randomized rounding to
//! feasible binary solutions, and certified lower/upper bounds on the BQP
//! optimum.

pub mod apps;
pub mod bench;
pub mod dual;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod rounding;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};

use nalgebra::DVector;

use model::{BqpInstance, Family, SdpProblem, VarDomain};
use rounding::{Discretizer, RoundingReport};
use solvers::{QnConfig, SnConfig, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolverKind {
    Qn,
    Sn,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qn" => Ok(SolverKind::Qn),
            "sn" => Ok(SolverKind::Sn),
            other => Err(Error::InvalidArgument(format!("unknown solver {other:?}, expected qn or sn"))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Qn => "qn",
            SolverKind::Sn => "sn",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub solver: SolverKind,
    pub gamma: f64,
    /// Randomized rounding samples (on top of the deterministic one).
    pub samples: usize,
    pub seed: u64,
    pub qn: QnConfig,
    pub sn: SnConfig,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            solver: SolverKind::Qn,
            gamma: model::DEFAULT_GAMMA,
            samples: 100,
            seed: 0,
            qn: QnConfig::default(),
            sn: SnConfig::default(),
        }
    }
}

/// Solve + rounding outcome on the original instance scale.
#[derive(Debug, Clone)]
pub struct FullReport {
    pub solve: SolveReport,
    pub rounding: RoundingReport,
    pub upper: f64,
    pub lower: f64,
    /// Numerical rank of `X*` (eigenvalues above `1e-6·λ_max`).
    pub rank: usize,
}

/// Family-aware relaxation: matching instances use their dedicated
/// semidefinite form, everything else is converted to ±1, homogenized and
/// Frobenius-normalized.
pub fn relax(bqp: &BqpInstance, gamma: f64) -> Result<SdpProblem> {
    let p = match bqp.family {
        Family::Matching { .. } => apps::matching_relaxation(bqp)?,
        _ => {
            let pm = if bqp.domain == VarDomain::ZeroOne {
                bqp.to_plus_minus_one()?
            } else {
                bqp.clone()
            };
            model::homogenize(&pm)?
        }
    };
    model::normalize(&p)?.with_gamma(gamma)
}

/// Default discretizer for an instance family. Partial-grouping supports are
/// recovered from the stored constraints; when that fails the plain-sign rule
/// is used and a warning logged.
pub fn discretizer_for(bqp: &BqpInstance) -> Discretizer {
    match bqp.family {
        Family::Bisection => Discretizer::Bisection,
        Family::ThresholdBalance { kappa } => Discretizer::ThresholdBalance { kappa, blocks: None },
        Family::Matching { k, l } => Discretizer::Assignment { k, l },
        Family::PartialGrouping => {
            let mut supports = Vec::new();
            for c in &bqp.constraints {
                if c.kind == model::ConstraintKind::Ineq
                    && c.rhs < 0.0
                    && c.quad.triplets().nnz() == 0
                    && c.quad.outers().len() == 1
                {
                    let t = &c.quad.outers()[0];
                    if t.coeff < 0.0 && t.left == t.right {
                        supports.push(t.left.clone());
                    }
                }
            }
            if supports.len() >= 2 {
                Discretizer::PartialGrouping { s_f: supports[0].clone(), s_b: supports[1].clone() }
            } else {
                log::warn!("partial-grouping supports not found in constraints; using plain sign");
                Discretizer::PlainSign
            }
        }
        Family::Generic => Discretizer::PlainSign,
    }
}

/// Full pipeline: relax, solve the dual, recover `X*`, round, and attach the
/// de-normalized bound pair.
pub fn solve_instance(bqp: &BqpInstance, opts: &SolveOptions) -> Result<FullReport> {
    let p = relax(bqp, opts.gamma)?;
    solve_relaxed(bqp, &p, opts)
}

/// Same pipeline when the relaxation is already at hand.
pub fn solve_relaxed(
    bqp: &BqpInstance,
    p: &SdpProblem,
    opts: &SolveOptions,
) -> Result<FullReport> {
    let mut solve = match opts.solver {
        SolverKind::Qn => {
            let mut cfg = opts.qn.clone();
            cfg.seed = opts.seed;
            solvers::solve_qn(p, &cfg, None)?
        }
        SolverKind::Sn => solvers::solve_sn(p, &opts.sn, None)?,
    };
    let disc = discretizer_for(bqp);
    let rounding = rounding::round_best(bqp, &solve.x_star, &disc, opts.samples, opts.seed)?;
    solve.bounds.upper = Some(rounding.best_objective);
    let rank = solve.x_star.numerical_rank(1e-6);
    Ok(FullReport {
        upper: rounding.best_objective,
        lower: solve.bounds.lower,
        rank,
        solve,
        rounding,
    })
}

/// Exhaustive BQP minimization over all 2ⁿ binary points; the reference
/// oracle behind `verify` and the small-instance test suites.
pub fn brute_force_optimum(bqp: &BqpInstance) -> Result<(f64, DVector<f64>)> {
    if bqp.n > 24 {
        return Err(Error::InvalidArgument(format!(
            "brute force capped at n = 24, got {}",
            bqp.n
        )));
    }
    let (lo, hi) = match bqp.domain {
        VarDomain::PlusMinusOne => (-1.0, 1.0),
        VarDomain::ZeroOne => (0.0, 1.0),
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut x = DVector::from_element(bqp.n, lo);
    for mask in 0..(1u64 << bqp.n) {
        for i in 0..bqp.n {
            x[i] = if mask >> i & 1 == 1 { hi } else { lo };
        }
        if !bqp.is_feasible(&x, 1e-9) {
            continue;
        }
        let obj = bqp.objective(&x);
        if best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true) {
            best = Some((obj, x.clone()));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no feasible binary point exists".into()))
}
