//! Self-verification suite: brute-force bound sandwich, finite-difference
//! gradient checks and the regularization-monotonicity property, run over
//! seeded random instances small enough for exhaustive enumeration.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dual::{dual_gradient, dual_value, lower_bound_from_value};
use crate::error::{Error, Result};
use crate::linalg::{dense_eig, SymMat};
use crate::model::{
    homogenize, normalize, BqpConstraint, BqpInstance, ConstraintKind, Family, VarDomain,
};
use crate::{brute_force_optimum, solve_instance, SolveOptions, SolverKind};

/// Environment variable that flips the sign of every lower bound inside the
/// sandwich check; a mutation hook proving the suite can fail.
pub const FAULT_ENV: &str = "SDCUT_VERIFY_FAULT";

#[derive(Debug, Clone, Default)]
pub struct PropertyOutcome {
    pub name: String,
    pub passed: usize,
    pub total: usize,
    pub counterexample_seeds: Vec<u64>,
}

impl PropertyOutcome {
    pub fn ok(&self) -> bool {
        self.counterexample_seeds.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub properties: Vec<PropertyOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.ok())
    }

    pub fn print(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for p in &self.properties {
            let status = if p.ok() { "PASS" } else { "FAIL" };
            write!(out, "{status}  {}: {}/{}", p.name, p.passed, p.total)?;
            if !p.ok() {
                write!(out, "  counterexample seeds: {:?}", p.counterexample_seeds)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Random bisection-core instance with extra random inequality constraints
/// whose right-hand sides leave slack at a planted balanced point, so that
/// the feasible set is never empty and rounding has something to find.
pub fn random_mixed_instance(n: usize, seed: u64) -> Result<BqpInstance> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument("mixed instances need even n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1));
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..=i {
            entries.push((i, j, rng.random::<f64>() * 2.0 - 1.0));
        }
    }
    let quad = SymMat::from_triplets(n, entries)?;
    let lin = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let mut bqp = BqpInstance::new(n, quad, lin, VarDomain::PlusMinusOne)?;

    // balanced planted point: first half +1, second half −1, shuffled
    let mut planted = DVector::from_fn(n, |i, _| if i < n / 2 { 1.0 } else { -1.0 });
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        planted.swap_rows(i, j);
    }

    // the balance equality, satisfied exactly by every bisection rounding
    let mut balance = SymMat::zeros(n);
    balance.push_outer(crate::linalg::OuterTerm::symmetric(
        1.0,
        DVector::from_element(n, 1.0),
    ))?;
    bqp.push_constraint(BqpConstraint {
        quad: balance,
        lin: DVector::zeros(n),
        rhs: 0.0,
        kind: ConstraintKind::Eq,
    })?;

    // one to three random quadratic inequalities with planted slack
    let extra = 1 + (seed % 3) as usize;
    for _ in 0..extra {
        let mut centries = Vec::new();
        for _ in 0..(n / 2).max(2) {
            centries.push((
                rng.random_range(0..n),
                rng.random_range(0..n),
                rng.random::<f64>() - 0.5,
            ));
        }
        let cq = SymMat::from_triplets(n, centries)?;
        let cl = DVector::from_fn(n, |_, _| 0.3 * (rng.random::<f64>() - 0.5));
        let at_planted = cq.quad_form(&planted) + cl.dot(&planted);
        let slack = (1.0 + rng.random::<f64>()) * (1.0 + at_planted.abs());
        bqp.push_constraint(BqpConstraint {
            quad: cq,
            lin: cl,
            rhs: at_planted + slack,
            kind: ConstraintKind::Ineq,
        })?;
    }
    bqp.family = Family::Bisection;
    Ok(bqp)
}

fn fault_active() -> bool {
    std::env::var(FAULT_ENV).map(|v| !v.is_empty() && v != "0").unwrap_or(false)
}

/// Bound sandwich at every solver iterate: for each instance,
/// `lower_bound(u_k) ≤ p* ≤ round_best` with `p*` from exhaustive
/// enumeration.
pub fn check_bound_sandwich(n_max: usize, trials: usize, seed: u64) -> Result<PropertyOutcome> {
    let fault = fault_active();
    let mut outcome =
        PropertyOutcome { name: "bound sandwich (every iterate)".into(), ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        let n = 2 * rng.random_range(2..=(n_max / 2).max(2));
        let inst_seed = seed.wrapping_add(1000 + t as u64);
        let bqp = random_mixed_instance(n.min(n_max), inst_seed)?;
        let (p_star, _) = brute_force_optimum(&bqp)?;
        let opts = SolveOptions {
            solver: SolverKind::Qn,
            gamma: 1e3,
            samples: 100,
            seed: inst_seed,
            ..Default::default()
        };
        let report = solve_instance(&bqp, &opts)?;
        let p = crate::relax(&bqp, opts.gamma)?;
        let sign = if fault { -1.0 } else { 1.0 };
        let every_lower_ok = report
            .solve
            .d_trace
            .iter()
            .all(|&d| sign * lower_bound_from_value(&p, d) <= p_star + 1e-9);
        let upper_ok = report.upper >= p_star - 1e-9;
        outcome.total += 1;
        if every_lower_ok && upper_ok {
            outcome.passed += 1;
        } else {
            outcome.counterexample_seeds.push(inst_seed);
        }
    }
    Ok(outcome)
}

/// Central finite differences against the analytic dual gradient, away from
/// eigenvalue crossings of `C(u)` at zero.
pub fn check_gradient(n_max: usize, trials: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut outcome =
        PropertyOutcome { name: "dual gradient vs finite differences".into(), ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(77));
    let mut t = 0u64;
    while outcome.total < trials {
        t += 1;
        if t > 20 * trials as u64 {
            break; // eigen-gap guard rejected too many points
        }
        let n = 2 * rng.random_range(2..=(n_max / 2).max(2));
        let inst_seed = seed.wrapping_add(5000 + t);
        let bqp = random_mixed_instance(n.min(n_max), inst_seed)?;
        let p = normalize(&homogenize(&bqp)?)?.with_gamma(100.0)?;
        let m = p.num_constraints();
        let u = DVector::from_fn(m, |i, _| {
            let v: f64 = 0.2 * (rng.random::<f64>() - 0.5);
            if p.kinds[i] == ConstraintKind::Ineq {
                v.abs()
            } else {
                v
            }
        });
        let eig = dense_eig(&p.c_dense(&u))?;
        if eig.values.iter().any(|&l| l.abs() < 1e-4) {
            continue;
        }
        let g = dual_gradient(&p, &u)?;
        let h = 1e-6;
        let mut ok = true;
        for i in 0..m {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += h;
            dn[i] -= h;
            if p.kinds[i] == ConstraintKind::Ineq && dn[i] < 0.0 {
                continue;
            }
            let fd = (dual_value(&p, &up)? - dual_value(&p, &dn)?) / (2.0 * h);
            if (g[i] - fd).abs() / g[i].abs().max(1.0) > 1e-5 {
                ok = false;
                break;
            }
        }
        outcome.total += 1;
        if ok {
            outcome.passed += 1;
        } else {
            outcome.counterexample_seeds.push(inst_seed);
        }
    }
    // one percent failure budget for guard leakage
    let budget = (outcome.total as f64 * 0.01).floor() as usize;
    if outcome.total - outcome.passed <= budget {
        outcome.counterexample_seeds.clear();
    }
    Ok(outcome)
}

/// `p(X*_γ)` is nonincreasing in γ (solution quality improves with γ).
pub fn check_gamma_monotonicity(n_max: usize, trials: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut outcome =
        PropertyOutcome { name: "p(X*) nonincreasing in gamma".into(), ..Default::default() };
    for t in 0..trials {
        let inst_seed = seed.wrapping_add(9000 + t as u64);
        let bqp = random_mixed_instance(n_max.min(10).max(4) & !1, inst_seed)?;
        let mut previous = f64::INFINITY;
        let mut ok = true;
        for gamma in [1e2, 1e3, 1e4] {
            let p = crate::relax(&bqp, gamma)?;
            let report = crate::solvers::solve_qn(&p, &crate::solvers::QnConfig::default(), None)?;
            let eval = p.evaluate_primal(crate::model::PrimalView::Factor(&report.x_star))?;
            let objective = p.scale.cost * eval.objective + p.objective_offset;
            if objective > previous + 1e-6 {
                ok = false;
            }
            previous = objective;
        }
        outcome.total += 1;
        if ok {
            outcome.passed += 1;
        } else {
            outcome.counterexample_seeds.push(inst_seed);
        }
    }
    Ok(outcome)
}

/// Runs the full property suite (`cmd_verify`).
pub fn run_verify(n_max: usize, trials: usize, seed: u64) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    if n_max < 4 || n_max > 14 {
        return Err(Error::InvalidArgument(format!("n_max must lie in 4..=14, got {n_max}")));
    }
    Ok(VerifyReport {
        properties: vec![
            check_bound_sandwich(n_max, trials, seed)?,
            check_gradient(n_max, trials, seed)?,
            check_gamma_monotonicity(n_max, trials.min(5), seed)?,
        ],
    })
}
