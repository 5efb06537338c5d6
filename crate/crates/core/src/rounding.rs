//! Randomized rounding: sample score vectors `z ~ N(0, X*)` from the SDP
//! solution factor, discretize with a problem-specific rule to a feasible
//! binary solution, and keep the best one. The best objective is the upper
//! bound reported next to the dual lower bound.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::PsdFactor;
use crate::model::{BqpInstance, VarDomain};

/// Discretization rule mapping a real score vector to a feasible binary
/// solution of its instance family.
#[derive(Debug, Clone)]
pub enum Discretizer {
    /// `x = sign(z − median(z))`, exactly balanced.
    Bisection,
    /// `x = sign(z − θ)` with `θ` picked so that `|1ᵀx| ≤ κn`; with `blocks`
    /// given as `(offset, len)` runs, the rule applies per block.
    ThresholdBalance { kappa: f64, blocks: Option<Vec<(usize, usize)>> },
    /// Rectangular linear assignment on the scores (sources × targets).
    Assignment { k: usize, l: usize },
    /// `x = sign(z)`.
    PlainSign,
    /// Forced foreground/background labels on the supports of `s_f`/`s_b`,
    /// plain sign elsewhere.
    PartialGrouping { s_f: DVector<f64>, s_b: DVector<f64> },
}

#[derive(Debug, Clone)]
pub struct RoundingReport {
    pub best_x: DVector<f64>,
    pub best_objective: f64,
    /// Number of score vectors drawn (the deterministic sample included).
    pub samples_used: usize,
    /// Objective of every feasible discretized sample, in draw order.
    pub objective_trace: Vec<f64>,
    /// Samples whose discretization failed the feasibility recheck.
    pub infeasible_skipped: usize,
}

/// Draws `z = V y`, `y ~ N(0, I_r)`, i.e. `z ~ N(0, X)` for `X = V Vᵀ`.
///
/// With `border` set, coordinate 0 is the homogenizing coordinate: the whole
/// vector is multiplied by its sign (so scores are expressed relative to
/// `x̄₀ = +1`) and the border entry is dropped.
pub fn sample_scores(x: &PsdFactor, border: bool, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scores_with_rng(x, border, &mut rng)
}

pub(crate) fn sample_scores_with_rng(
    x: &PsdFactor,
    border: bool,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let n_out = if border { x.dim() - 1 } else { x.dim() };
    if x.rank() == 0 {
        log::warn!("sampling from a rank-0 factor: scores are identically zero");
        return DVector::zeros(n_out);
    }
    let y: DVector<f64> = DVector::from_fn(x.rank(), |_, _| StandardNormal.sample(rng));
    let z = x.factor() * y;
    finish_scores(z, border)
}

fn finish_scores(z: DVector<f64>, border: bool) -> DVector<f64> {
    if border {
        let s = if z[0] < 0.0 { -1.0 } else { 1.0 };
        z.rows(1, z.len() - 1) * s
    } else {
        z
    }
}

/// Deterministic score for sample 0: the dominant column of the factor.
fn dominant_scores(x: &PsdFactor, border: bool) -> DVector<f64> {
    let n_out = if border { x.dim() - 1 } else { x.dim() };
    if x.rank() == 0 {
        return DVector::zeros(n_out);
    }
    finish_scores(x.factor().column(0).into_owned(), border)
}

/// `diag(X)` of the variable block, the LP objective of assignment rounding.
fn diagonal_scores(x: &PsdFactor, border: bool) -> DVector<f64> {
    let start = usize::from(border);
    DVector::from_fn(x.dim() - start, |i, _| x.factor().row(i + start).norm_squared())
}

#[inline]
fn sign_pm(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Balanced bisection rounding: exactly `n/2` coordinates get `+1` (the
/// largest scores; ties broken by stable index order).
pub fn round_bisection(z: &DVector<f64>) -> Result<DVector<f64>> {
    let n = z.len();
    if n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("bisection rounding needs even n, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    let mut x = DVector::from_element(n, -1.0);
    for &i in order.iter().take(n / 2) {
        x[i] = 1.0;
    }
    Ok(x)
}

/// Threshold rounding `x = sign(z − θ)` with the three-case rule on the
/// descending-sorted scores, keeping `|1ᵀx| ≤ κn`.
pub fn round_threshold_balance(z: &DVector<f64>, kappa: f64) -> Result<DVector<f64>> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidArgument(format!("kappa must lie in (0, 1], got {kappa}")));
    }
    let n = z.len();
    let bound = kappa * n as f64;
    let count_pos = z.iter().filter(|&&v| v > 0.0).count();
    let imbalance = 2.0 * count_pos as f64 - n as f64; // 1ᵀ sign(z) with ties at −1
    let theta = if imbalance.abs() <= bound {
        0.0
    } else {
        let mut sorted: Vec<f64> = z.iter().copied().collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        // 1-based index of the last retained +1 in the sorted order.
        let j = if imbalance > bound {
            ((n as f64 + bound) / 2.0).floor() as usize
        } else {
            ((n as f64 - bound) / 2.0).ceil() as usize
        };
        let j = j.clamp(1, n - 1);
        0.5 * (sorted[j - 1] + sorted[j])
    };
    let mut x = DVector::from_fn(n, |i, _| sign_pm(z[i] - theta));
    // Massive ties at θ can push every tied entry to −1; promote tied entries
    // in index order until the balance constraint holds again.
    let mut sum: f64 = x.sum();
    if sum < -bound {
        for i in 0..n {
            if z[i] == theta && x[i] < 0.0 {
                x[i] = 1.0;
                sum += 2.0;
                if sum >= -bound {
                    break;
                }
            }
        }
    }
    Ok(x)
}

/// Per-block threshold rounding (one θ per image/block).
pub fn round_threshold_balance_blocks(
    z: &DVector<f64>,
    kappa: f64,
    blocks: &[(usize, usize)],
) -> Result<DVector<f64>> {
    let n = z.len();
    let mut x = DVector::zeros(n);
    let mut covered = 0usize;
    for &(off, len) in blocks {
        if off + len > n {
            return Err(Error::DimensionMismatch { expected: n, got: off + len });
        }
        let zb = z.rows(off, len).into_owned();
        let xb = round_threshold_balance(&zb, kappa)?;
        x.rows_mut(off, len).copy_from(&xb);
        covered += len;
    }
    if covered != n {
        return Err(Error::InvalidArgument("blocks must cover every coordinate".into()));
    }
    Ok(x)
}

/// Exact rectangular linear assignment: maximizes `Σ score[(i,j)] x[(i,j)]`
/// subject to every source row summing to one and every target column to at
/// most one (`l ≥ k`). Returns a 0/1 vector of length `k·l`.
pub fn round_assignment(scores: &DVector<f64>, k: usize, l: usize) -> Result<DVector<f64>> {
    if k == 0 || l < k {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= l, got k={k}, l={l}")));
    }
    if scores.len() != k * l {
        return Err(Error::DimensionMismatch { expected: k * l, got: scores.len() });
    }
    // Minimize the negated scores on a k×l rectangle (k ≤ l).
    let cost = DMatrix::from_fn(k, l, |i, j| -scores[i * l + j]);
    let row_to_col = hungarian_min(&cost);
    let mut x = DVector::zeros(k * l);
    for (i, j) in row_to_col.iter().enumerate() {
        x[i * l + j] = 1.0;
    }
    Ok(x)
}

/// Shortest-augmenting-path Hungarian algorithm with potentials on a
/// rectangular cost matrix (`rows ≤ cols`); returns the column matched to
/// each row of an exact minimum-cost assignment.
fn hungarian_min(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let m = cost.ncols();
    debug_assert!(n <= m);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Partial-grouping rounding: the support of `s_f` is forced to `+1`, the
/// support of `s_b` to `−1`, everything else takes `sign(zᵢ)` (ties map to
/// `−1`).
pub fn round_partial_grouping(
    z: &DVector<f64>,
    s_f: &DVector<f64>,
    s_b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = z.len();
    if s_f.len() != n || s_b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: s_f.len().max(s_b.len()) });
    }
    if (0..n).any(|i| s_f[i] > 0.0 && s_b[i] > 0.0) {
        return Err(Error::InvalidArgument(
            "foreground and background supports must be disjoint".into(),
        ));
    }
    Ok(DVector::from_fn(n, |i, _| {
        if s_f[i] > 0.0 {
            1.0
        } else if s_b[i] > 0.0 {
            -1.0
        } else {
            sign_pm(z[i])
        }
    }))
}

fn discretize(disc: &Discretizer, z: &DVector<f64>) -> Result<DVector<f64>> {
    match disc {
        Discretizer::Bisection => round_bisection(z),
        Discretizer::ThresholdBalance { kappa, blocks: None } => round_threshold_balance(z, *kappa),
        Discretizer::ThresholdBalance { kappa, blocks: Some(blocks) } => {
            round_threshold_balance_blocks(z, *kappa, blocks)
        }
        Discretizer::Assignment { k, l } => round_assignment(z, *k, *l),
        Discretizer::PlainSign => Ok(z.map(sign_pm)),
        Discretizer::PartialGrouping { s_f, s_b } => round_partial_grouping(z, s_f, s_b),
    }
}

/// Assignment scores must be nonnegative surrogates of `diag(X)`; random
/// Gaussian samples enter through their squares `zᵢ² ≈ Xᵢᵢ`.
fn scores_for(disc: &Discretizer, z: DVector<f64>) -> DVector<f64> {
    match disc {
        Discretizer::Assignment { .. } => z.map(|v| v * v),
        _ => z,
    }
}

/// Runs the rounding loop: the deterministic sample (dominant factor column,
/// or `diag(X)` for the assignment family) followed by `samples` Gaussian
/// draws. Every candidate is re-verified against the instance constraints;
/// infeasible candidates are skipped and counted. Objectives are evaluated
/// on the original instance.
pub fn round_best(
    bqp: &BqpInstance,
    x: &PsdFactor,
    disc: &Discretizer,
    samples: usize,
    seed: u64,
) -> Result<RoundingReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("rounding needs at least one sample".into()));
    }
    let border = if x.dim() == bqp.n {
        false
    } else if x.dim() == bqp.n + 1 {
        true
    } else {
        return Err(Error::DimensionMismatch { expected: bqp.n, got: x.dim() });
    };

    let feas_tol = 1e-9 * bqp.constraints.iter().map(|c| c.rhs.abs()).fold(1.0, f64::max);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut trace = Vec::new();
    let mut skipped = 0usize;
    let mut used = 0usize;

    for draw in 0..=samples {
        let z = if draw == 0 {
            match disc {
                Discretizer::Assignment { .. } => diagonal_scores(x, border),
                _ => dominant_scores(x, border),
            }
        } else {
            scores_for(disc, sample_scores(x, border, seed.wrapping_add(draw as u64)))
        };
        used += 1;
        let cand = discretize(disc, &z)?;
        let cand = to_domain(bqp.domain, disc, cand);
        if !bqp.in_domain(&cand) || !bqp.is_feasible(&cand, feas_tol) {
            skipped += 1;
            continue;
        }
        let obj = bqp.objective(&cand);
        trace.push(obj);
        if best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true) {
            best = Some((obj, cand));
        }
    }

    let Some((best_objective, best_x)) = best else {
        return Err(Error::InvalidArgument("no feasible solution found during rounding".into()));
    };
    Ok(RoundingReport {
        best_x,
        best_objective,
        samples_used: used,
        objective_trace: trace,
        infeasible_skipped: skipped,
    })
}

fn to_domain(domain: VarDomain, disc: &Discretizer, x: DVector<f64>) -> DVector<f64> {
    let produces_zero_one = matches!(disc, Discretizer::Assignment { .. });
    match (domain, produces_zero_one) {
        (VarDomain::PlusMinusOne, false) | (VarDomain::ZeroOne, true) => x,
        (VarDomain::ZeroOne, false) => x.map(|v| 0.5 * (v + 1.0)),
        (VarDomain::PlusMinusOne, true) => x.map(|v| 2.0 * v - 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_examples() {
        let z = DVector::from_vec(vec![3.0, 1.0, -1.0, -3.0]);
        let x = round_bisection(&z).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0, -1.0, -1.0]);

        let z = DVector::from_element(6, 0.5);
        let x = round_bisection(&z).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);

        assert!(round_bisection(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn bisection_matches_order_statistics() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = 2 * rng.random_range(1..8usize);
            let z = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            let x = round_bisection(&z).unwrap();
            assert_eq!(x.sum(), 0.0);
            // every +1 score is at least every −1 score
            let min_pos =
                (0..n).filter(|&i| x[i] > 0.0).map(|i| z[i]).fold(f64::INFINITY, f64::min);
            let max_neg =
                (0..n).filter(|&i| x[i] < 0.0).map(|i| z[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(min_pos >= max_neg);
        }
    }

    #[test]
    fn threshold_balance_three_cases() {
        // already balanced: θ = 0
        let z = DVector::from_vec(vec![1.0, -1.0, 2.0, -2.0, 0.5, -0.5]);
        let x = round_threshold_balance(&z, 1.0 / 3.0).unwrap();
        assert_eq!(x.sum(), 0.0);

        // second case: n = 6, κn = 2, all-positive scores
        let z = DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
        let x = round_threshold_balance(&z, 1.0 / 3.0).unwrap();
        // θ = (z̃₄ + z̃₅)/2 = 1.5 → four +1, two −1
        assert_eq!(x.sum(), 2.0);
        assert_eq!(x.as_slice(), &[1.0, 1.0, 1.0, 1.0, -1.0, -1.0]);

        // mirrored third case
        let z = DVector::from_vec(vec![-5.0, -4.0, -3.0, -2.0, -1.0, 0.0]);
        let x = round_threshold_balance(&z, 1.0 / 3.0).unwrap();
        assert!(x.sum().abs() <= 2.0);
    }

    #[test]
    fn threshold_balance_random_feasibility() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let n = rng.random_range(4..40usize);
            let kappa = rng.random::<f64>() * 0.9 + 0.1;
            let z = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let x = round_threshold_balance(&z, kappa).unwrap();
            assert!(
                x.sum().abs() <= kappa * n as f64 + 1e-12,
                "trial {trial}: imbalance {} > {}",
                x.sum().abs(),
                kappa * n as f64
            );
        }
    }

    #[test]
    fn blockwise_threshold_feasible_per_block() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let blocks = [(0usize, 8usize), (8, 6)];
        let z = DVector::from_fn(14, |_, _| rng.random::<f64>() - 0.3);
        let kappa = 0.5;
        let x = round_threshold_balance_blocks(&z, kappa, &blocks).unwrap();
        for &(off, len) in &blocks {
            let s: f64 = x.rows(off, len).sum();
            assert!(s.abs() <= kappa * len as f64 + 1e-12);
        }
    }

    #[test]
    fn assignment_small_cases() {
        // K = 1: argmax
        let x = round_assignment(&DVector::from_vec(vec![0.2, 0.9, 0.5]), 1, 3).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 1.0, 0.0]);

        // K = L = 2: diagonal beats the swap (1.1 vs 0.9)
        let x = round_assignment(&DVector::from_vec(vec![0.9, 0.1, 0.8, 0.2]), 2, 2).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn assignment_matches_exhaustive_enumeration() {
        use rand::Rng;
        let (k, l) = (4usize, 6usize);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let scores = DVector::from_fn(k * l, |_, _| rng.random::<f64>());
            let x = round_assignment(&scores, k, l).unwrap();
            let got: f64 = scores.dot(&x);
            // enumerate all injective source→target maps
            let mut best = f64::NEG_INFINITY;
            for a in 0..l {
                for b in 0..l {
                    for c in 0..l {
                        for d in 0..l {
                            let picks = [a, b, c, d];
                            let distinct = (0..4).all(|i| (0..i).all(|j| picks[i] != picks[j]));
                            if distinct {
                                let v: f64 = (0..4).map(|i| scores[i * l + picks[i]]).sum();
                                best = best.max(v);
                            }
                        }
                    }
                }
            }
            assert!((got - best).abs() < 1e-12, "{got} vs {best}");
            for i in 0..k {
                let row: f64 = (0..l).map(|j| x[i * l + j]).sum();
                assert_eq!(row, 1.0);
            }
            for j in 0..l {
                let col: f64 = (0..k).map(|i| x[i * l + j]).sum();
                assert!(col <= 1.0);
            }
        }
    }

    #[test]
    fn partial_grouping_forces_labels() {
        let z = DVector::from_vec(vec![0.5, 0.2, 0.9, 0.1]);
        let s_f = DVector::from_vec(vec![0.7, 0.0, 0.0, 0.0]);
        let s_b = DVector::from_vec(vec![0.0, 0.0, 0.3, 0.0]);
        let x = round_partial_grouping(&z, &s_f, &s_b).unwrap();
        assert_eq!(x[0], 1.0);
        assert_eq!(x[2], -1.0, "background forced even with positive score");
        assert_eq!(x[1], 1.0);
        assert_eq!(x[3], 1.0);

        // empty supports reduce to plain sign
        let zero = DVector::zeros(4);
        let x = round_partial_grouping(&z, &zero, &zero).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0, 1.0, 1.0]);

        // overlapping supports rejected
        let overlap = DVector::from_vec(vec![0.7, 0.0, 0.3, 0.0]);
        assert!(round_partial_grouping(&z, &overlap, &s_b).is_err());
    }

    #[test]
    fn sample_scores_rank1_coherence() {
        let ones = DVector::from_element(5, 1.0);
        let m = &ones * ones.transpose();
        let f = crate::linalg::project_psd(&m, crate::linalg::ProjectMode::Full).unwrap();
        let z = sample_scores(&f, false, 7);
        for i in 1..5 {
            assert!((z[i] - z[0]).abs() < 1e-12, "rank-1 scores must be constant");
        }
    }

    #[test]
    fn sample_scores_covariance_of_identity() {
        let f =
            crate::linalg::project_psd(&DMatrix::identity(4, 4), crate::linalg::ProjectMode::Full)
                .unwrap();
        let draws = 100_000usize;
        let mut cov = DMatrix::zeros(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..draws {
            let z = sample_scores_with_rng(&f, false, &mut rng);
            cov.ger(1.0 / draws as f64, &z, &z, 1.0);
        }
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - expect).abs() < 0.05, "cov[{i},{j}] = {}", cov[(i, j)]);
            }
        }
    }
}
