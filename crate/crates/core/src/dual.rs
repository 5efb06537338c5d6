//! The dual function `d_γ(u) = −uᵀb − (γ/2)‖Π(C(u))‖²_F` over the box
//! `uᵢ ≥ 0, i ∈ I_in`, its gradient `γΦ[Π(C(u))] − b`, primal recovery
//! `X* = γΠ(C(u*))` and the certified lower bound `d_γ(u) − trace²/(2γ)`.
//!
//! The gradient sign follows from `∂C/∂uᵢ = −Bᵢ`; it is the version under
//! which `∇d(u*) = 0` reproduces primal feasibility `Φ[X*] = b`, and it is
//! validated against central finite differences in the tests.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{
    dense_eig, project_psd_partial, EigPairs, EigWarm, LanczosStats, PsdFactor, StructureHint,
};
use crate::model::{ConstraintKind, SdpProblem};

/// Eigensolver route for evaluating a dual point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigRoute {
    /// Pick from the problem structure hint.
    Auto,
    /// Full dense factorization (keeps all eigenpairs).
    Dense,
    /// Lanczos on the positive part only.
    Partial,
}

impl EigRoute {
    pub fn resolve(self, p: &SdpProblem) -> EigRoute {
        match self {
            EigRoute::Auto => match p.structure {
                StructureHint::Dense => EigRoute::Dense,
                _ => EigRoute::Partial,
            },
            other => other,
        }
    }
}

/// A dual point with the value, gradient and eigen-information of `C(u)`,
/// all obtained from a single factorization.
#[derive(Debug, Clone)]
pub struct DualPoint {
    pub u: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    /// Positive eigenpairs of `C(u)` scaled into `Π(C(u)) = V Vᵀ`.
    pub projection: PsdFactor,
    /// Full eigendecomposition, present on the dense route.
    pub full_eig: Option<EigPairs>,
    pub stats: LanczosStats,
}

impl DualPoint {
    pub fn rank(&self) -> usize {
        self.projection.rank()
    }
}

pub(crate) fn check_box_feasible(p: &SdpProblem, u: &DVector<f64>) -> Result<()> {
    if u.len() != p.num_constraints() {
        return Err(Error::DimensionMismatch { expected: p.num_constraints(), got: u.len() });
    }
    for i in 0..u.len() {
        if p.kinds[i] == ConstraintKind::Ineq && u[i] < 0.0 {
            return Err(Error::InfeasibleDual { index: i, value: u[i] });
        }
        if !u[i].is_finite() {
            return Err(Error::InfeasibleDual { index: i, value: u[i] });
        }
    }
    Ok(())
}

/// Evaluates value, gradient and projection at `u` with one factorization of
/// `C(u)`.
pub fn eval_dual(
    p: &SdpProblem,
    u: &DVector<f64>,
    route: EigRoute,
    warm: Option<&mut EigWarm>,
    lanczos_tol: f64,
) -> Result<DualPoint> {
    check_box_feasible(p, u)?;
    let route = route.resolve(p);
    let (projection, full_eig, stats) = match route {
        EigRoute::Dense | EigRoute::Auto => {
            let c = p.c_dense(u);
            let eig = dense_eig(&c)?;
            (PsdFactor::from_eig(&eig), Some(eig), LanczosStats::default())
        }
        EigRoute::Partial => {
            let op = p.c_operator(u);
            let mut local = EigWarm::new(0);
            let warm = match warm {
                Some(w) => w,
                None => &mut local,
            };
            let (factor, stats) = project_psd_partial(&op, warm, lanczos_tol)?;
            (factor, None, stats)
        }
    };
    let gamma = p.gamma;
    let value = -u.dot(&p.rhs) - 0.5 * gamma * projection.fro_norm_sq();
    let phi = p.phi_factor(projection.factor());
    let grad = &phi * gamma - &p.rhs;
    Ok(DualPoint { u: u.clone(), value, grad, projection, full_eig, stats })
}

/// `d_γ(u)`; rejects box-infeasible `u`.
pub fn dual_value(p: &SdpProblem, u: &DVector<f64>) -> Result<f64> {
    Ok(eval_dual(p, u, EigRoute::Auto, None, 1e-10)?.value)
}

/// `∇d_γ(u) = γΦ[Π(C(u))] − b`
pub fn dual_gradient(p: &SdpProblem, u: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(eval_dual(p, u, EigRoute::Auto, None, 1e-10)?.grad)
}

/// Primal recovery `X* = γ Π(C(u*))` with its constraint residuals.
pub fn recover_primal(p: &SdpProblem, u_star: &DVector<f64>) -> Result<(PsdFactor, DVector<f64>)> {
    let point = eval_dual(p, u_star, EigRoute::Auto, None, 1e-10)?;
    let x = point.projection.scaled(p.gamma);
    let residuals = p.phi_factor(x.factor()) - &p.rhs;
    Ok((x, residuals))
}

/// Lower bound `d_γ(u) − trace²/(2γ)` on the BQP optimum, valid for every
/// box-feasible `u`, expressed on the original problem scale.
pub fn lower_bound(p: &SdpProblem, u: &DVector<f64>) -> Result<f64> {
    Ok(lower_bound_from_value(p, dual_value(p, u)?))
}

/// Same de-normalization applied to an already computed `d_γ(u)`.
pub fn lower_bound_from_value(p: &SdpProblem, d_value: f64) -> f64 {
    let t = p.trace_bound;
    p.scale.cost * (d_value - t * t / (2.0 * p.gamma)) + p.objective_offset
}

/// Certified bounds on the BQP optimum.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BoundPair {
    /// Objective of the best rounded feasible solution, if rounding ran.
    pub upper: Option<f64>,
    pub lower: f64,
}

impl BoundPair {
    pub fn is_consistent(&self) -> bool {
        match self.upper {
            Some(up) => self.lower <= up + 1e-9,
            None => true,
        }
    }
}
