//! Inexact smoothing Newton method on `E(ε, u) = [ε; F̃(ε, u)] = 0`.
//!
//! `F̃(ε, u) = u − Π̃_D(ε, w)` with `w = u + γΦ[Π̃(ε, C(u))] − b` smooths the
//! fixed-point characterization `u* = Π_D(u* + ∇d_γ(u*))` of the dual
//! optimum; the Huber parameter `ε` is driven to zero alongside the Newton
//! iteration. Equality-only problems have a symmetric positive semidefinite
//! Jacobian solved by conjugate gradients; mixed problems use BiCGStab.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    bicgstab, cg, deadline_hit, default_start, project_box, rel_change, EigIterStat, SnConfig,
    SolveReport, Termination,
};
use crate::dual::{lower_bound_from_value, BoundPair};
use crate::error::{Error, Result};
use crate::linalg::{
    dense_eig, huber_deps, huber_dv, huber_unchecked, omega_apply, EigPairs, PsdFactor,
};
use crate::model::{ConstraintKind, SdpProblem};

/// Everything the Newton system needs at one `(ε, u)` point, derived from a
/// single full eigendecomposition of `C(u)`.
#[derive(Debug, Clone)]
pub struct SmoothPoint {
    pub eps: f64,
    pub u: DVector<f64>,
    /// Full eigendecomposition of `C(u)` (independent of `ε`).
    pub eig: EigPairs,
    /// `φ(ε, λᵢ)` per eigenvalue.
    pub phi: DVector<f64>,
    /// `w = u + γΦ[Π̃(ε, C(u))] − b`
    pub w: DVector<f64>,
    /// `F̃(ε, u)`
    pub f: DVector<f64>,
    /// Hard dual value `d_γ(u)` from the same factorization.
    pub d_value: f64,
    /// `‖E(ε, u)‖² = ε² + ‖F̃‖²`
    pub merit: f64,
}

impl SmoothPoint {
    pub fn e_inf_norm(&self) -> f64 {
        self.f.amax().max(self.eps.abs())
    }

    fn check_against(&self, p: &SdpProblem) -> Result<()> {
        if self.u.len() != p.num_constraints() || self.eig.dim() != p.dim() {
            return Err(Error::StaleCache(
                "smooth point was built for a different problem".into(),
            ));
        }
        Ok(())
    }
}

/// Builds a [`SmoothPoint`] at `(ε, u)`; `ε = 0` is allowed and yields the
/// unsmoothed fixed-point residual `F(u)`.
pub fn smooth_point(p: &SdpProblem, eps: f64, u: &DVector<f64>) -> Result<SmoothPoint> {
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothing eps must be >= 0, got {eps}")));
    }
    if u.len() != p.num_constraints() {
        return Err(Error::DimensionMismatch { expected: p.num_constraints(), got: u.len() });
    }
    let eig = dense_eig(&p.c_dense(u))?;
    Ok(smooth_point_from_eig(p, eps, u, eig))
}

fn smooth_point_from_eig(
    p: &SdpProblem,
    eps: f64,
    u: &DVector<f64>,
    eig: EigPairs,
) -> SmoothPoint {
    let n = eig.len();
    let phi = DVector::from_fn(n, |i, _| huber_unchecked(eps, eig.values[i]));
    // Π̃(ε, C(u)) as a factor over the strictly positive φ entries.
    let s = phi.iter().take_while(|&&v| v > 0.0).count();
    let phi_map = if s == 0 {
        DVector::zeros(p.num_constraints())
    } else {
        let mut factor = eig.vectors.columns(0, s).into_owned();
        for (k, mut col) in factor.column_iter_mut().enumerate() {
            col *= phi[k].sqrt();
        }
        p.phi_factor(&factor)
    };
    let w = u + &phi_map * p.gamma - &p.rhs;
    let f = DVector::from_fn(u.len(), |i, _| {
        let proj = match p.kinds[i] {
            ConstraintKind::Eq => w[i],
            ConstraintKind::Ineq => huber_unchecked(eps, w[i]),
        };
        u[i] - proj
    });
    let d_value = -u.dot(&p.rhs)
        - 0.5 * p.gamma * eig.values.iter().map(|&l| l.max(0.0) * l.max(0.0)).sum::<f64>();
    let merit = eps * eps + f.norm_squared();
    SmoothPoint { eps, u: u.clone(), eig, phi, w, f, d_value, merit }
}

/// `F̃(ε, u)`; the smoothed optimality residual. At `ε = 0` its roots are the
/// dual optima.
pub fn smooth_f(p: &SdpProblem, eps: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(smooth_point(p, eps, u)?.f)
}

/// Diagonal of `∇_w Π̃_D(ε, w)`: 1 on equality indices, `∂φ/∂v` on
/// inequality indices.
fn pi_d_diag(p: &SdpProblem, pt: &SmoothPoint) -> DVector<f64> {
    DVector::from_fn(pt.w.len(), |i, _| match p.kinds[i] {
        ConstraintKind::Eq => 1.0,
        ConstraintKind::Ineq => huber_dv(pt.eps, pt.w[i]),
    })
}

/// Jacobian-vector product `∇_u F̃(ε, u)(h)`.
///
/// `h − ∇_wΠ̃_D(ε,w)(h − γΦ[P (Ω ∘ PᵀΨ(h)P) Pᵀ])`; the spectral part runs in
/// `O(n² r)` through the zero pattern of `Ω`.
pub fn jacobian_vec(p: &SdpProblem, pt: &SmoothPoint, h: &DVector<f64>) -> Result<DVector<f64>> {
    pt.check_against(p)?;
    if pt.eps <= 0.0 {
        return Err(Error::InvalidArgument("jacobian_vec requires eps > 0".into()));
    }
    if h.len() != pt.u.len() {
        return Err(Error::DimensionMismatch { expected: pt.u.len(), got: h.len() });
    }
    let dpd = pi_d_diag(p, pt);
    let psi_h = p.psi_dense(h);
    let spectral = omega_apply(pt.eps, &pt.eig, &psi_h)?;
    let inner = h - p.phi_dense(&spectral) * p.gamma;
    Ok(DVector::from_fn(h.len(), |i, _| h[i] - dpd[i] * inner[i]))
}

/// `∇_ε F̃(ε, u) = −∂_εΠ̃_D(ε, w) − ∇_wΠ̃_D(ε, w)(γΦ[P diag(∂_εφ(ε,λ)) Pᵀ])`
pub fn jacobian_eps(p: &SdpProblem, pt: &SmoothPoint) -> Result<DVector<f64>> {
    pt.check_against(p)?;
    if pt.eps <= 0.0 {
        return Err(Error::InvalidArgument("jacobian_eps requires eps > 0".into()));
    }
    let dpd = pi_d_diag(p, pt);
    // ∂φ/∂ε over the eigenvalues is supported on the smoothing band and
    // nonnegative, so it factors like a PSD matrix.
    let g = DVector::from_fn(pt.eig.len(), |i, _| huber_deps(pt.eps, pt.eig.values[i]));
    let idx: Vec<usize> = (0..g.len()).filter(|&i| g[i] > 0.0).collect();
    let phi_term = if idx.is_empty() {
        DVector::zeros(pt.u.len())
    } else {
        let mut factor = DMatrix::zeros(pt.eig.dim(), idx.len());
        for (c, &i) in idx.iter().enumerate() {
            factor.column_mut(c).copy_from(&(&pt.eig.vectors.column(i) * g[i].sqrt()));
        }
        p.phi_factor(&factor)
    };
    Ok(DVector::from_fn(pt.u.len(), |i, _| {
        let d_eps_pid = match p.kinds[i] {
            ConstraintKind::Eq => 0.0,
            ConstraintKind::Ineq => huber_deps(pt.eps, pt.w[i]),
        };
        -d_eps_pid - dpd[i] * p.gamma * phi_term[i]
    }))
}

#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub d_eps: f64,
    pub d_u: DVector<f64>,
    pub inner_iters: usize,
    pub rel_residual: f64,
}

/// Solves the smoothed Newton system at `pt` for the target smoothing
/// `eps_bar`: `Δε = ε̄ − ε` exactly, then
/// `∇_uF̃ Δu = −F̃ − ∇_εF̃ Δε` to relative residual `inner_tol` (conjugate
/// gradients when no inequality constraints exist, BiCGStab otherwise). A
/// BiCGStab breakdown is retried once at a jittered `ε` before erroring.
pub fn newton_step(
    p: &SdpProblem,
    pt: &SmoothPoint,
    eps_bar: f64,
    inner_tol: f64,
    max_inner: usize,
) -> Result<NewtonStep> {
    let attempt = |pt: &SmoothPoint| -> Result<NewtonStep> {
        let d_eps = eps_bar - pt.eps;
        let je = jacobian_eps(p, pt)?;
        let rhs = -&pt.f - &je * d_eps;
        let apply = |h: &DVector<f64>| jacobian_vec(p, pt, h).expect("consistent point");
        let out = if p.has_inequalities() {
            bicgstab(apply, &rhs, inner_tol, max_inner)
        } else {
            cg(apply, &rhs, inner_tol, max_inner)
        };
        if out.breakdown && out.rel_residual > inner_tol.max(1e-2) {
            return Err(Error::InnerSolver(format!(
                "krylov breakdown at relative residual {:.3e}",
                out.rel_residual
            )));
        }
        Ok(NewtonStep {
            d_eps,
            d_u: out.x,
            inner_iters: out.iters,
            rel_residual: out.rel_residual,
        })
    };
    match attempt(pt) {
        Ok(step) => Ok(step),
        Err(Error::InnerSolver(_)) => {
            // ε only enters through the Huber band: rebuild the point at a
            // jittered ε from the cached eigendecomposition and retry.
            let jittered =
                smooth_point_from_eig(p, pt.eps * 1.5 + 1e-12, &pt.u, pt.eig.clone());
            attempt(&jittered)
        }
        Err(e) => Err(e),
    }
}

/// Hard-projection dual gradient from the cached eigendecomposition.
fn hard_gradient(p: &SdpProblem, pt: &SmoothPoint) -> DVector<f64> {
    let pos = EigPairs { values: pt.eig.values.clone(), vectors: pt.eig.vectors.clone() };
    let factor = PsdFactor::from_eig(&pos);
    p.phi_factor(factor.factor()) * p.gamma - &p.rhs
}

/// Solves the dual by the inexact smoothing Newton method. Dense
/// factorization route only: every iteration needs all eigenpairs of
/// `C(u)`, so this is the medium-size/dense solver; use [`super::solve_qn`]
/// for large sparse problems.
pub fn solve_sn(p: &SdpProblem, cfg: &SnConfig, u0: Option<DVector<f64>>) -> Result<SolveReport> {
    cfg.validate()?;
    let start_time = Instant::now();
    if p.num_constraints() == 0 {
        let mut report = super::qn::solve_qn(p, &super::QnConfig::default(), None)?;
        report.wall_time = start_time.elapsed();
        return Ok(report);
    }

    let mut u = u0.unwrap_or_else(|| default_start(p));
    project_box(p, &mut u);
    let mut eps = cfg.eps0;
    let mut pt = smooth_point(p, eps, &u)?;
    let mut evals = 1usize;
    let n = p.dim();

    let mut d_trace = vec![pt.d_value];
    let mut merit_trace = vec![pt.merit];
    let mut eig_stats = vec![stat_from(&pt, n, false)];
    let mut last_reduction_norm = pt.merit.sqrt();
    let mut termination = Termination::MaxIters;
    let mut iterations = 0usize;

    for k in 0..cfg.max_iters {
        if deadline_hit(&cfg.deadline) {
            termination = Termination::TimedOut;
            break;
        }
        // Step 1.1: smoothing target. Reduce ε when the residual norm has
        // dropped an order of magnitude since the last reduction, or when the
        // smoothed system is solved down to the smoothing level itself
        // (without the second clause the ε component of E keeps ‖E‖ ≳ ε and
        // the reduction criterion can never fire again).
        let e_norm = pt.merit.sqrt();
        let f_norm = pt.f.norm();
        let reduce = e_norm <= 0.1 * last_reduction_norm || f_norm <= 0.5 * eps;
        let eps_bar = if reduce { (cfg.mu * eps).max(1e-14) } else { eps };
        if reduce {
            last_reduction_norm = e_norm;
        }

        // Step 1.2: inexact Newton system.
        let inner_tol = 0.1f64.min(e_norm.sqrt()).max(1e-12);
        let step = newton_step(p, &pt, eps_bar, inner_tol, cfg.max_inner_iters);

        // Step 1.3: backtracking line search on ‖E‖², iterates projected onto
        // the dual box so feasibility holds exactly.
        let mut accepted: Option<SmoothPoint> = None;
        let mut fallback = false;
        if let Ok(step) = step {
            let mut scale = 1.0f64;
            for _ in 0..cfg.max_line_search {
                let eps_try = (eps + scale * step.d_eps).max(1e-14);
                let mut u_try = &u + &step.d_u * scale;
                project_box(p, &mut u_try);
                let cand = smooth_point(p, eps_try, &u_try)?;
                evals += 1;
                if cand.merit < pt.merit {
                    accepted = Some(cand);
                    break;
                }
                scale *= cfg.rho;
            }
        }
        if accepted.is_none() {
            // Gradient rescue: a projected ascent step on d_γ.
            fallback = true;
            let g = hard_gradient(p, &pt);
            let mut alpha = 1.0 / g.norm().max(1.0);
            for _ in 0..cfg.max_line_search {
                let mut u_try = &u + &g * alpha;
                project_box(p, &mut u_try);
                let cand = smooth_point(p, eps, &u_try)?;
                evals += 1;
                if cand.d_value > pt.d_value {
                    accepted = Some(cand);
                    break;
                }
                alpha *= 0.5;
            }
        }

        let Some(next) = accepted else {
            termination = Termination::InnerSolverFailure;
            break;
        };
        if fallback {
            log::debug!("iteration {k}: newton step rejected, used gradient step");
        }

        let d_old = pt.d_value;
        eps = next.eps;
        u = next.u.clone();
        pt = next;
        iterations = k + 1;
        d_trace.push(pt.d_value);
        merit_trace.push(pt.merit);
        eig_stats.push(stat_from(&pt, n, fallback));

        // Step 1.4 plus the root-equation stop.
        if pt.e_inf_norm() <= cfg.e_inf_tol {
            termination = Termination::Converged;
            break;
        }
        if !fallback && eps <= 1e-6 && rel_change(pt.d_value, d_old) <= cfg.tol {
            termination = Termination::Converged;
            break;
        }
    }

    let factor = PsdFactor::from_eig(&pt.eig).scaled(p.gamma);
    let lower = lower_bound_from_value(p, pt.d_value);
    Ok(SolveReport {
        u_star: u,
        x_star: factor,
        d_star: pt.d_value,
        iterations,
        termination,
        d_trace,
        merit_trace,
        eig_stats,
        dual_evals: evals,
        wall_time: start_time.elapsed(),
        bounds: BoundPair { upper: None, lower },
    })
}

fn stat_from(pt: &SmoothPoint, n: usize, fallback: bool) -> EigIterStat {
    EigIterStat {
        rank: pt.eig.count_positive(),
        matvecs: 0,
        requested: n,
        fallback,
    }
}
