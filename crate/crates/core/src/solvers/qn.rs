//! Box-constrained limited-memory quasi-Newton maximization of the dual:
//! projected two-loop L-BFGS with gradient-projection active-set
//! identification and a projected backtracking line search.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DVector;

use super::{
    deadline_hit, default_start, project_box, rel_change, EigIterStat, QnConfig, SolveReport,
    Termination,
};
use crate::dual::{eval_dual, lower_bound_from_value, BoundPair, DualPoint, EigRoute};
use crate::error::Result;
use crate::linalg::{lanczos_topk, EigWarm};
use crate::model::{ConstraintKind, SdpProblem};

struct Pair {
    s: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
}

/// Maximizes `d_γ` over the dual box starting from `u0` (defaults to zero on
/// equality indices and `1e-6` on inequality indices). Internally minimizes
/// `f = −d_γ`; accepted iterates are monotone in `d_γ` and stay box-feasible.
pub fn solve_qn(p: &SdpProblem, cfg: &QnConfig, u0: Option<DVector<f64>>) -> Result<SolveReport> {
    let start_time = Instant::now();
    let m = p.num_constraints();
    if m == 0 {
        return degenerate_report(p, start_time);
    }
    let route = cfg.eig_route.resolve(p);
    let mut warm = EigWarm::new(cfg.seed);

    let mut u = u0.unwrap_or_else(|| default_start(p));
    project_box(p, &mut u);
    if route == EigRoute::Partial && cfg.shift_start {
        shift_to_negative_semidefinite(p, &mut u)?;
    }

    let mut evals = 0usize;
    let eval = |u: &DVector<f64>, warm: &mut EigWarm, evals: &mut usize| -> Result<DualPoint> {
        *evals += 1;
        eval_dual(p, u, route, Some(warm), cfg.lanczos_tol)
    };

    let mut dp = eval(&u, &mut warm, &mut evals)?;
    let mut d_trace = vec![dp.value];
    let mut eig_stats = vec![EigIterStat {
        rank: dp.rank(),
        matvecs: dp.stats.matvecs,
        requested: dp.stats.requested,
        fallback: false,
    }];

    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);
    let mut termination = Termination::MaxIters;
    let mut iterations = 0usize;

    for k in 0..cfg.max_iters {
        if deadline_hit(&cfg.deadline) {
            termination = Termination::TimedOut;
            break;
        }
        // Minimize f = −d: gradient of f is −∇d.
        let g = -&dp.grad;
        let active = active_set(p, &u, &g);
        let mut dir = two_loop_direction(&pairs, &g, &active);
        // Safeguard: fall back to steepest descent if the model direction is
        // not a descent direction.
        let mut gd = g.dot(&dir);
        if !(gd < -1e-14 * g.norm() * dir.norm().max(1e-300)) {
            dir = -&g;
            for &i in &active {
                dir[i] = 0.0;
            }
            gd = g.dot(&dir);
        }
        if dir.norm() == 0.0 || gd >= 0.0 {
            // Projected gradient vanished: stationary over the box.
            termination = Termination::Converged;
            break;
        }

        let alpha0 = if k == 0 { (1.0 / g.norm().max(1.0)).min(1.0) } else { 1.0 };
        let mut alpha = alpha0;
        let mut accepted: Option<(DVector<f64>, DualPoint)> = None;
        let mut iter_matvecs = 0usize;
        let mut iter_requested = 0usize;
        for _ in 0..cfg.max_line_search {
            let mut u_try = &u + &dir * alpha;
            project_box(p, &mut u_try);
            let dp_try = eval(&u_try, &mut warm, &mut evals)?;
            iter_matvecs += dp_try.stats.matvecs;
            iter_requested = iter_requested.max(dp_try.stats.requested);
            // Armijo condition on f along the projected path.
            let step = &u_try - &u;
            let decrease = -(dp_try.value - dp.value); // f_try − f
            if decrease <= cfg.armijo * g.dot(&step) {
                accepted = Some((u_try, dp_try));
                break;
            }
            alpha *= 0.5;
        }

        let Some((u_new, dp_new)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };

        let s = &u_new - &u;
        let y = &dp.grad - &dp_new.grad; // y for f = −d is g_new − g = ∇d − ∇d_new
        let sy = s.dot(&y);
        if sy > (1.0 - cfg.curvature) * 1e-8 * s.norm() * y.norm() && sy.is_finite() {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back(Pair { rho: 1.0 / sy, s, y });
        }

        let d_old = dp.value;
        u = u_new;
        dp = dp_new;
        iterations = k + 1;
        d_trace.push(dp.value);
        eig_stats.push(EigIterStat {
            rank: dp.rank(),
            matvecs: iter_matvecs,
            requested: iter_requested,
            fallback: false,
        });

        if rel_change(dp.value, d_old) <= cfg.tol {
            termination = Termination::Converged;
            break;
        }
    }

    let x_star = dp.projection.scaled(p.gamma);
    let lower = lower_bound_from_value(p, dp.value);
    Ok(SolveReport {
        u_star: u,
        x_star,
        d_star: dp.value,
        iterations,
        termination,
        d_trace,
        merit_trace: Vec::new(),
        eig_stats,
        dual_evals: evals,
        wall_time: start_time.elapsed(),
        bounds: BoundPair { upper: None, lower },
    })
}

fn degenerate_report(p: &SdpProblem, start_time: Instant) -> Result<SolveReport> {
    let u = DVector::zeros(0);
    let dp = eval_dual(p, &u, EigRoute::Auto, None, 1e-10)?;
    let x_star = dp.projection.scaled(p.gamma);
    let lower = lower_bound_from_value(p, dp.value);
    Ok(SolveReport {
        u_star: u,
        x_star,
        d_star: dp.value,
        iterations: 0,
        termination: Termination::Converged,
        d_trace: vec![dp.value],
        merit_trace: Vec::new(),
        eig_stats: vec![EigIterStat {
            rank: dp.rank(),
            matvecs: dp.stats.matvecs,
            requested: dp.stats.requested,
            fallback: false,
        }],
        dual_evals: 1,
        wall_time: start_time.elapsed(),
        bounds: BoundPair { upper: None, lower },
    })
}

/// Inequality coordinates pinned at their bound with a gradient pushing
/// further out; frozen during the current iteration.
fn active_set(p: &SdpProblem, u: &DVector<f64>, g: &DVector<f64>) -> Vec<usize> {
    let scale = u.amax().max(1.0);
    (0..u.len())
        .filter(|&i| p.kinds[i] == ConstraintKind::Ineq && u[i] <= 1e-12 * scale && g[i] > 0.0)
        .collect()
}

fn two_loop_direction(pairs: &VecDeque<Pair>, g: &DVector<f64>, active: &[usize]) -> DVector<f64> {
    let mut q = g.clone();
    for &i in active {
        q[i] = 0.0;
    }
    if pairs.is_empty() {
        return -q;
    }
    let mut alphas = Vec::with_capacity(pairs.len());
    for pair in pairs.iter().rev() {
        let a = pair.rho * pair.s.dot(&q);
        q.axpy(-a, &pair.y, 1.0);
        alphas.push(a);
    }
    let last = pairs.back().unwrap();
    let h0 = last.s.dot(&last.y) / last.y.norm_squared().max(1e-300);
    let mut r = q * h0;
    for (pair, &a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = pair.rho * pair.y.dot(&r);
        r.axpy(a - b, &pair.s, 1.0);
    }
    for &i in active {
        r[i] = 0.0;
    }
    -r
}

/// When every coordinate carries a `diag(X) = 1` constraint, shifting those
/// dual variables by `λ_max(C(u))` makes `C(u) ⪯ 0` exactly, so the cold
/// start has zero projected rank and the Lanczos route never has to chase a
/// half-positive spectrum.
fn shift_to_negative_semidefinite(
    p: &SdpProblem,
    u: &mut DVector<f64>,
) -> Result<()> {
    let n = p.dim();
    for i in 0..n {
        let b = &p.cons[i];
        let tri = b.triplets();
        let is_unit_diag = b.outers().is_empty()
            && tri.nnz() == 1
            && tri.iter().next().map(|(r, c, v)| r == i && c == i && (v - 1.0).abs() < 1e-12)
                == Some(true);
        if !is_unit_diag || p.kinds[i] != ConstraintKind::Eq {
            return Ok(());
        }
    }
    let op = p.c_operator(u);
    let (eig, _) = lanczos_topk(&op, 1, None, 1e-6, None)?;
    let lmax = eig.values[0];
    if lmax > 0.0 {
        let shift = lmax * (1.0 + 1e-6) + 1e-12;
        for i in 0..n {
            u[i] += shift;
        }
        log::debug!("cold-start shift {shift:.3e} applied to diagonal duals");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMat;
    use crate::model::{homogenize, normalize, BqpConstraint, BqpInstance, VarDomain};

    #[test]
    fn linear_program_over_box_case() {
        // A ⪰ 0 and all constraints PSD with u ≥ 0 keeps C(u) ⪯ 0, so
        // d(u) = −uᵀb; with b > 0 the analytic optimum is u = 0, d = 0.
        // Built directly so the box is one-dimensional.
        let p = crate::model::SdpBuilder::new(3, {
            let mut a = SymMat::identity(3);
            a.scale(1.0 / 3f64.sqrt());
            a
        })
        .constraint(
            {
                let mut b = SymMat::identity(3);
                b.scale(1.0 / 3f64.sqrt());
                b
            },
            2.0,
            crate::model::ConstraintKind::Ineq,
        )
        .build()
        .unwrap();
        let report = solve_qn(&p, &QnConfig::default(), None).unwrap();
        assert!(report.converged());
        assert!(report.d_star.abs() < 1e-8, "d* = {}", report.d_star);
        assert!(report.u_star.amax() < 1e-6);
    }

    #[test]
    fn ascent_is_monotone_and_feasible() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                entries.push((i, j, rng.random::<f64>() - 0.5));
            }
        }
        let quad = SymMat::from_triplets(n, entries).unwrap();
        let lin = nalgebra::DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let mut bqp = BqpInstance::new(n, quad, lin, VarDomain::PlusMinusOne).unwrap();
        bqp.push_constraint(BqpConstraint {
            quad: SymMat::unit(n, 1, 0, 1.0).unwrap(),
            lin: nalgebra::DVector::zeros(n),
            rhs: 0.5,
            kind: crate::model::ConstraintKind::Ineq,
        })
        .unwrap();
        let p = normalize(&homogenize(&bqp).unwrap()).unwrap().with_gamma(100.0).unwrap();
        let report = solve_qn(&p, &QnConfig::default(), None).unwrap();
        assert!(report.converged(), "termination {:?}", report.termination);
        for w in report.d_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "dual ascent violated: {} -> {}", w[0], w[1]);
        }
        assert!(report.d_star >= report.d_trace[0] - 1e-12);
        for i in p.ineq_indices() {
            assert!(report.u_star[i] >= 0.0);
        }
    }

    #[test]
    fn degenerate_no_constraints() {
        let mut a = SymMat::identity(2);
        a.scale(-0.5);
        let p = crate::model::SdpBuilder::new(2, a).build().unwrap();
        let report = solve_qn(&p, &QnConfig::default(), None).unwrap();
        assert!(report.converged());
        assert_eq!(report.iterations, 0);
        // X* = γΠ(−A) = γ·0.5·I
        let x = report.x_star.to_dense();
        assert!((x[(0, 0)] - p.gamma * 0.5).abs() < 1e-9);
    }
}
