//! Instance generators and baselines: random graph bisection (dense and
//! k-neighbour sparse), random point-set graph matching with its
//! semidefinite relaxation, and the RatioCut/NCut spectral baselines.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dense_eig, lanczos_topk, OuterTerm, SymMat, SymOperator};
use crate::model::{
    BqpConstraint, BqpInstance, ConstraintKind, Family, SdpBuilder, SdpProblem, VarDomain,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Complete,
    /// Each node connected to its k nearest neighbours (symmetrized).
    KNeighbour(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightRule {
    /// Edge weights uniform in (0, 1].
    Uniform,
    /// `w_ij = exp(−d_ij²/σ²)` over planted 2-D coordinates; `None` picks σ
    /// as the mean edge length.
    GaussianSimilarity { sigma: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphSpec {
    pub n: usize,
    pub topology: Topology,
    pub weights: WeightRule,
    pub seed: u64,
}

impl GraphSpec {
    pub fn dense_uniform(n: usize, seed: u64) -> Self {
        GraphSpec { n, topology: Topology::Complete, weights: WeightRule::Uniform, seed }
    }

    pub fn sparse_similarity(n: usize, k: usize, seed: u64) -> Self {
        GraphSpec {
            n,
            topology: Topology::KNeighbour(k),
            weights: WeightRule::GaussianSimilarity { sigma: None },
            seed,
        }
    }
}

/// Symmetric nonnegative edge weights with zero diagonal.
pub fn gen_graph_weights(spec: &GraphSpec) -> Result<SymMat> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::InvalidArgument("graph needs at least two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points: Vec<(f64, f64)> =
        (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let dist = |a: usize, b: usize| {
        let dx = points[a].0 - points[b].0;
        let dy = points[a].1 - points[b].1;
        (dx * dx + dy * dy).sqrt()
    };

    let edges: Vec<(usize, usize)> = match spec.topology {
        Topology::Complete => {
            (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
        }
        Topology::KNeighbour(k) => {
            if k == 0 || k >= n {
                return Err(Error::InvalidArgument(format!("k-neighbour degree {k} out of range")));
            }
            let mut set = std::collections::BTreeSet::new();
            for i in 0..n {
                let mut near: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                near.sort_by(|&a, &b| dist(i, a).partial_cmp(&dist(i, b)).unwrap());
                for &j in near.iter().take(k) {
                    set.insert((i.max(j), i.min(j)));
                }
            }
            set.into_iter().collect()
        }
    };

    let sigma = match spec.weights {
        WeightRule::GaussianSimilarity { sigma } => sigma.unwrap_or_else(|| {
            let mean: f64 =
                edges.iter().map(|&(i, j)| dist(i, j)).sum::<f64>() / edges.len() as f64;
            mean.max(1e-6)
        }),
        WeightRule::Uniform => 1.0,
    };
    let entries: Vec<(usize, usize, f64)> = edges
        .iter()
        .map(|&(i, j)| {
            let w = match spec.weights {
                WeightRule::Uniform => 1.0 - rng.random::<f64>(), // (0, 1]
                WeightRule::GaussianSimilarity { .. } => {
                    let d = dist(i, j);
                    (-d * d / (sigma * sigma)).exp()
                }
            };
            (i, j, w)
        })
        .collect();
    SymMat::from_triplets(n, entries)
}

/// Graph bisection BQP: `min −xᵀWx` subject to `xᵀ1 = 0`, stored as the
/// quadratic equality `⟨11ᵀ, xxᵀ⟩ = 0` so the problem stays purely quadratic
/// and the semidefinite relaxation needs no homogenizing border.
pub fn gen_bisection(spec: &GraphSpec) -> Result<BqpInstance> {
    if spec.n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "bisection needs an even node count, got {}",
            spec.n
        )));
    }
    let w = gen_graph_weights(spec)?;
    let mut quad = w.clone();
    quad.scale(-1.0);
    let mut bqp = BqpInstance::new(spec.n, quad, DVector::zeros(spec.n), VarDomain::PlusMinusOne)?;
    let mut balance = SymMat::zeros(spec.n);
    balance.push_outer(OuterTerm::symmetric(1.0, DVector::from_element(spec.n, 1.0)))?;
    bqp.push_constraint(BqpConstraint {
        quad: balance,
        lin: DVector::zeros(spec.n),
        rhs: 0.0,
        kind: ConstraintKind::Eq,
    })?;
    bqp.family = Family::Bisection;
    Ok(bqp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingSpec {
    /// Source points (each must be matched).
    pub k: usize,
    /// Target points, `l ≥ k`.
    pub l: usize,
    /// Gaussian jitter applied to the planted copies of the source points.
    pub jitter: f64,
    /// Bandwidth of the structural-consistency kernel; `None` picks the
    /// median pairwise-distance gap.
    pub sigma: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MatchingInstance {
    pub bqp: BqpInstance,
    pub sdp: SdpProblem,
    /// `planted[i]` is the target index the i-th source point was copied to.
    pub planted: Vec<usize>,
    /// Local similarities `exp(−d(srcᵢ, tgtⱼ)²/σ_h²)` in `(0, 1]`.
    pub local_similarity: DVector<f64>,
    /// Structural consistencies `exp(−(d_s − d_t)²/σ²)` in `(0, 1]`.
    pub structural_similarity: SymMat,
}

/// Random point-set matching: 2-D sources uniform in the unit square,
/// targets are jittered copies plus `l − k` distractors in shuffled order.
/// The BQP cost carries the negated similarities so the planted matching
/// minimizes it.
pub fn gen_matching(spec: &MatchingSpec) -> Result<MatchingInstance> {
    let (k, l) = (spec.k, spec.l);
    if k == 0 || l < k {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= l, got k={k}, l={l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let src: Vec<(f64, f64)> = (0..k).map(|_| (rng.random(), rng.random())).collect();
    let mut tgt: Vec<(f64, f64)> = Vec::with_capacity(l);
    for p in &src {
        let jx: f64 = StandardNormal.sample(&mut rng);
        let jy: f64 = StandardNormal.sample(&mut rng);
        tgt.push((p.0 + spec.jitter * jx, p.1 + spec.jitter * jy));
    }
    for _ in k..l {
        tgt.push((rng.random(), rng.random()));
    }
    // Shuffle target order so index identity carries no information.
    let mut perm: Vec<usize> = (0..l).collect();
    for i in (1..l).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut planted = vec![0usize; k];
    let mut shuffled = vec![(0.0, 0.0); l];
    for (orig, &pos) in perm.iter().enumerate() {
        shuffled[pos] = tgt[orig];
        if orig < k {
            planted[orig] = pos;
        }
    }
    let tgt = shuffled;

    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let n = k * l;

    let mut local_d: Vec<f64> = Vec::with_capacity(n);
    for i in 0..k {
        for j in 0..l {
            local_d.push(d(src[i], tgt[j]));
        }
    }
    let sigma_h = median(&mut local_d.clone()).max(1e-6);
    let local_similarity =
        DVector::from_fn(n, |idx, _| (-local_d[idx].powi(2) / (sigma_h * sigma_h)).exp());

    let mut gaps: Vec<f64> = Vec::new();
    for i in 0..k {
        for kk in 0..i {
            for j in 0..l {
                for ll in 0..l {
                    if j != ll {
                        gaps.push((d(src[i], src[kk]) - d(tgt[j], tgt[ll])).abs());
                    }
                }
            }
        }
    }
    let sigma_s = spec.sigma.unwrap_or_else(|| median(&mut gaps.clone()).max(1e-6));
    let mut entries = Vec::new();
    for i in 0..k {
        for kk in 0..i {
            for j in 0..l {
                for ll in 0..l {
                    if j == ll {
                        continue;
                    }
                    let gap = d(src[i], src[kk]) - d(tgt[j], tgt[ll]);
                    let sim = (-gap * gap / (sigma_s * sigma_s)).exp();
                    entries.push((i * l + j, kk * l + ll, sim));
                }
            }
        }
    }
    let structural_similarity = SymMat::from_triplets(n, entries)?;

    // Negated similarities: good matchings have small objective.
    let beta = 1.0 / k as f64;
    let mut quad = structural_similarity.clone();
    quad.scale(-beta);
    let lin = -&local_similarity;
    let mut bqp = BqpInstance::new(n, quad, lin, VarDomain::ZeroOne)?;
    for i in 0..k {
        let mut row = DVector::zeros(n);
        for j in 0..l {
            row[i * l + j] = 1.0;
        }
        bqp.push_constraint(BqpConstraint {
            quad: SymMat::zeros(n),
            lin: row,
            rhs: 1.0,
            kind: ConstraintKind::Eq,
        })?;
    }
    for j in 0..l {
        let mut col = DVector::zeros(n);
        for i in 0..k {
            col[i * l + j] = 1.0;
        }
        bqp.push_constraint(BqpConstraint {
            quad: SymMat::zeros(n),
            lin: col,
            rhs: 1.0,
            kind: ConstraintKind::Ineq,
        })?;
    }
    bqp.family = Family::Matching { k, l };

    let sdp = matching_relaxation(&bqp)?;
    Ok(MatchingInstance { bqp, sdp, planted, local_similarity, structural_similarity })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Semidefinite relaxation of a 0/1 matching BQP over `X̄ = [[1, xᵀ],[x, X]]`:
/// `diag(X) = x` coupling, one row-sum equality per source, and zero
/// constraints on entries pairing one source with two targets or one target
/// with two sources. All constraints are equalities, so the smoothing Newton
/// solver runs plain conjugate gradients on it.
pub fn matching_relaxation(bqp: &BqpInstance) -> Result<SdpProblem> {
    let Family::Matching { k, l } = bqp.family else {
        return Err(Error::InvalidArgument("instance family is not matching".into()));
    };
    if bqp.domain != VarDomain::ZeroOne || bqp.n != k * l {
        return Err(Error::InvalidArgument("matching relaxation needs a 0/1 instance of size k*l".into()));
    }
    let n = bqp.n;
    let dim = n + 1;
    let mut cost = bqp.quad.embedded(dim, 1);
    let border: Vec<(usize, usize, f64)> = (0..n)
        .filter(|&j| bqp.lin[j] != 0.0)
        .map(|j| (j + 1, 0, 0.5 * bqp.lin[j]))
        .collect();
    if !border.is_empty() {
        let mut entries: Vec<(usize, usize, f64)> = cost.triplets().iter().collect();
        entries.extend(border);
        cost = SymMat::from_triplets(dim, entries)?;
    }

    let mut builder = SdpBuilder::new(dim, cost)
        .homogenized(true)
        .trace_bound((k + 1) as f64)
        .objective_offset(bqp.offset);
    // X̄₀₀ = 1
    builder = builder.constraint(SymMat::unit(dim, 0, 0, 1.0)?, 1.0, ConstraintKind::Eq);
    // diag(X) = x
    for j in 0..n {
        let b = SymMat::from_triplets(dim, [(j + 1, j + 1, 1.0), (j + 1, 0, -0.5)])?;
        builder = builder.constraint(b, 0.0, ConstraintKind::Eq);
    }
    // row sums over the border: Σ_j x_{il+j} = 1
    for i in 0..k {
        let entries: Vec<(usize, usize, f64)> =
            (0..l).map(|j| (1 + i * l + j, 0, 0.5)).collect();
        builder = builder.constraint(SymMat::from_triplets(dim, entries)?, 1.0, ConstraintKind::Eq);
    }
    // one source cannot take two targets
    for i in 0..k {
        for j in 0..l {
            for jj in 0..j {
                let b = SymMat::from_triplets(dim, [(1 + i * l + j, 1 + i * l + jj, 0.5)])?;
                builder = builder.constraint(b, 0.0, ConstraintKind::Eq);
            }
        }
    }
    // one target cannot take two sources
    for j in 0..l {
        for i in 0..k {
            for ii in 0..i {
                let b = SymMat::from_triplets(dim, [(1 + i * l + j, 1 + ii * l + j, 0.5)])?;
                builder = builder.constraint(b, 0.0, ConstraintKind::Eq);
            }
        }
    }
    builder.build()
}

/// Greedy matching baseline: sources in order take their most similar free
/// target.
pub fn greedy_matching(inst: &MatchingInstance) -> DVector<f64> {
    let Family::Matching { k, l } = inst.bqp.family else { unreachable!() };
    let mut taken = vec![false; l];
    let mut x = DVector::zeros(k * l);
    for i in 0..k {
        let mut best = None;
        for j in 0..l {
            if !taken[j] {
                let s = inst.local_similarity[i * l + j];
                if best.map(|(_, bs)| s > bs).unwrap_or(true) {
                    best = Some((j, s));
                }
            }
        }
        let (j, _) = best.expect("l >= k leaves a free target");
        taken[j] = true;
        x[i * l + j] = 1.0;
    }
    x
}

/// Number of source points not matched to their planted target.
pub fn matching_errors(x: &DVector<f64>, planted: &[usize], k: usize, l: usize) -> usize {
    (0..k).filter(|&i| x[i * l + planted[i]] != 1.0).count()
}

struct ShiftedNeg<'a> {
    base: &'a SymMat,
    shift: f64,
}

impl SymOperator for ShiftedNeg<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    // y = shift·v − L v
    fn apply_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(v);
        *out *= self.shift;
        self.base.matvec_acc(v, -1.0, out);
    }
}

const SPECTRAL_DENSE_LIMIT: usize = 500;

/// Eigenvector of the second-smallest eigenvalue of `l_mat`.
fn second_smallest_eigvec(l_mat: &SymMat) -> Result<DVector<f64>> {
    let n = l_mat.dim();
    if n < SPECTRAL_DENSE_LIMIT {
        let eig = dense_eig(&l_mat.to_dense())?;
        Ok(eig.vectors.column(n - 2).into_owned())
    } else {
        // Smallest eigenpairs of L are the largest of shift·I − L.
        let (top, _) = lanczos_topk(l_mat, 1, None, 1e-8, None)?;
        let shift = top.values[0] * (1.0 + 1e-6) + 1.0;
        let op = ShiftedNeg { base: l_mat, shift };
        let (eig, _) = lanczos_topk(&op, 2, None, 1e-9, None)?;
        Ok(eig.vectors.column(1).into_owned())
    }
}

/// RatioCut spectral baseline: the Fiedler vector of `L = D − W`
/// median-thresholded into an exactly balanced ±1 labelling.
pub fn spectral_ratiocut(w: &SymMat) -> Result<DVector<f64>> {
    let n = w.dim();
    let degrees = w.matvec(&DVector::from_element(n, 1.0));
    let mut lap = w.clone();
    lap.scale(-1.0);
    let mut entries: Vec<(usize, usize, f64)> = lap.triplets().iter().collect();
    for i in 0..n {
        entries.push((i, i, degrees[i]));
    }
    let lap = SymMat::from_triplets(n, entries)?;
    let fiedler = second_smallest_eigvec(&lap)?;
    crate::rounding::round_bisection(&fiedler)
}

/// Normalized-cut spectral baseline on `D^{-1/2}(D − W)D^{-1/2}`; isolated
/// vertices get a small degree regularization.
pub fn spectral_ncut(w: &SymMat) -> Result<DVector<f64>> {
    let n = w.dim();
    let degrees = w.matvec(&DVector::from_element(n, 1.0));
    let dmax = degrees.amax().max(1.0);
    let dreg = DVector::from_fn(n, |i, _| degrees[i].max(1e-12 * dmax));
    let dinv_sqrt = dreg.map(|v| 1.0 / v.sqrt());
    let mut entries: Vec<(usize, usize, f64)> = w
        .triplets()
        .iter()
        .map(|(i, j, v)| (i, j, -v * dinv_sqrt[i] * dinv_sqrt[j]))
        .collect();
    for i in 0..n {
        entries.push((i, i, 1.0));
    }
    let lsym = SymMat::from_triplets(n, entries)?;
    let v = second_smallest_eigvec(&lsym)?;
    let scores = DVector::from_fn(n, |i, _| v[i] * dinv_sqrt[i]);
    crate::rounding::round_bisection(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_weights_are_symmetric_nonnegative_zero_diag() {
        for spec in [GraphSpec::dense_uniform(10, 3), GraphSpec::sparse_similarity(20, 4, 5)] {
            let w = gen_graph_weights(&spec).unwrap();
            let d = w.to_dense();
            for i in 0..spec.n {
                assert_eq!(d[(i, i)], 0.0);
                for j in 0..spec.n {
                    assert!(d[(i, j)] >= 0.0);
                    assert_eq!(d[(i, j)], d[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn generators_are_deterministic_in_seed() {
        let a = gen_bisection(&GraphSpec::dense_uniform(8, 42)).unwrap();
        let b = gen_bisection(&GraphSpec::dense_uniform(8, 42)).unwrap();
        assert_eq!(a.quad, b.quad);
        let c = gen_bisection(&GraphSpec::dense_uniform(8, 43)).unwrap();
        assert_ne!(a.quad, c.quad);

        let m1 = gen_matching(&MatchingSpec { k: 3, l: 5, jitter: 0.02, sigma: None, seed: 9 })
            .unwrap();
        let m2 = gen_matching(&MatchingSpec { k: 3, l: 5, jitter: 0.02, sigma: None, seed: 9 })
            .unwrap();
        assert_eq!(m1.planted, m2.planted);
        assert_eq!(m1.bqp.lin, m2.bqp.lin);
    }

    #[test]
    fn two_node_bisection_enumerates() {
        let bqp = gen_bisection(&GraphSpec::dense_uniform(2, 1)).unwrap();
        // only feasible points: (1,−1) and (−1,1); objective = −xᵀ(−W)x… each
        // evaluates to 2·w₁₂ by enumeration
        let mut best = f64::INFINITY;
        for x in [
            DVector::from_vec(vec![1.0, -1.0]),
            DVector::from_vec(vec![-1.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        ] {
            if bqp.is_feasible(&x, 1e-12) {
                best = best.min(bqp.objective(&x));
            }
        }
        let w12 = -bqp.quad.to_dense()[(0, 1)];
        assert!((best - 2.0 * w12).abs() < 1e-12);
    }

    #[test]
    fn four_node_unit_weights_all_splits_tie() {
        // complete graph with unit weights via GaussianSimilarity σ → ∞
        let spec = GraphSpec {
            n: 4,
            topology: Topology::Complete,
            weights: WeightRule::GaussianSimilarity { sigma: Some(1e9) },
            seed: 0,
        };
        let bqp = gen_bisection(&spec).unwrap();
        let mut values = Vec::new();
        for mask in 0..16u32 {
            let x = DVector::from_fn(4, |i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 });
            if bqp.is_feasible(&x, 1e-9) {
                values.push(bqp.objective(&x));
            }
        }
        assert_eq!(values.len(), 6); // all balanced splits
        for v in &values {
            assert!((v - values[0]).abs() < 1e-9, "balanced splits must tie");
        }
    }

    #[test]
    fn matching_constraint_count_matches_formula() {
        for (k, l) in [(1usize, 1usize), (2, 2), (3, 5), (4, 6)] {
            let inst =
                gen_matching(&MatchingSpec { k, l, jitter: 0.01, sigma: None, seed: 7 }).unwrap();
            let expect = 1 + k * l + k + k * l * (l - 1) / 2 + l * k * (k - 1) / 2;
            assert_eq!(inst.sdp.num_constraints(), expect, "k={k} l={l}");
            assert!(!inst.sdp.has_inequalities());
            assert_eq!(inst.sdp.dim(), k * l + 1);
        }
    }

    #[test]
    fn matching_similarities_in_unit_interval() {
        let inst =
            gen_matching(&MatchingSpec { k: 4, l: 7, jitter: 0.05, sigma: None, seed: 12 })
                .unwrap();
        for &v in inst.local_similarity.iter() {
            assert!(v > 0.0 && v <= 1.0);
        }
        for (_, _, v) in inst.structural_similarity.triplets().iter() {
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn trivial_matching_k1_l1() {
        let inst =
            gen_matching(&MatchingSpec { k: 1, l: 1, jitter: 0.0, sigma: None, seed: 3 }).unwrap();
        let x = greedy_matching(&inst);
        assert_eq!(x.as_slice(), &[1.0]);
        assert!(inst.bqp.is_feasible(&x, 1e-12));
        assert_eq!(matching_errors(&x, &inst.planted, 1, 1), 0);
    }

    #[test]
    fn separable_two_point_matching_recovers_permutation() {
        let inst =
            gen_matching(&MatchingSpec { k: 2, l: 2, jitter: 1e-4, sigma: None, seed: 5 }).unwrap();
        // enumerate both permutations of the 0/1 matching
        let perms = [[0usize, 1], [1, 0]];
        let mut best = (f64::INFINITY, 0usize);
        for (pi, perm) in perms.iter().enumerate() {
            let mut x = DVector::zeros(4);
            for (i, &j) in perm.iter().enumerate() {
                x[i * 2 + j] = 1.0;
            }
            let obj = inst.bqp.objective(&x);
            if obj < best.0 {
                best = (obj, pi);
            }
        }
        let planted_perm = if inst.planted == [0, 1] { 0 } else { 1 };
        assert_eq!(best.1, planted_perm, "planted matching must minimize the cost");
    }

    #[test]
    fn ratiocut_splits_path_graph() {
        // P₄ path: Fiedler split separates the two ends
        let w = SymMat::from_triplets(4, [(1, 0, 1.0), (2, 1, 1.0), (3, 2, 1.0)]).unwrap();
        let x = spectral_ratiocut(&w).unwrap();
        assert_eq!(x.sum(), 0.0);
        assert_eq!(x[0], x[1]);
        assert_eq!(x[2], x[3]);
        assert_ne!(x[0], x[3]);
    }

    #[test]
    fn spectral_methods_recover_two_cliques() {
        // two 4-cliques joined by a single weak edge
        let mut entries = Vec::new();
        for i in 0..4usize {
            for j in 0..i {
                entries.push((i, j, 1.0));
                entries.push((i + 4, j + 4, 1.0));
            }
        }
        entries.push((4, 3, 0.01));
        let w = SymMat::from_triplets(8, entries).unwrap();
        for x in [spectral_ratiocut(&w).unwrap(), spectral_ncut(&w).unwrap()] {
            assert_eq!(x.sum(), 0.0);
            for i in 1..4 {
                assert_eq!(x[i], x[0], "first clique should stay together");
                assert_eq!(x[i + 4], x[4], "second clique should stay together");
            }
            assert_ne!(x[0], x[4]);
        }
    }
}
