//! Symmetric-matrix kernels: dense and partial eigendecomposition behind an
//! operator interface, projection onto the positive semidefinite cone, Huber
//! smoothing of `max(0, v)` and the directional derivative of the smoothed
//! projection.

mod lanczos;
mod sparse;

pub use lanczos::{lanczos_topk, project_psd_partial, EigWarm, LanczosStats};
pub use sparse::{OuterTerm, SymMat, SymTriplets};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Hint describing how `apply` is implemented, used to pick eigensolvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureHint {
    Dense,
    Sparse,
    SparsePlusLowRank,
}

/// Black-box symmetric linear operator `v -> M v`.
pub trait SymOperator {
    fn dim(&self) -> usize;

    /// `out = M v`
    fn apply_into(&self, v: &DVector<f64>, out: &mut DVector<f64>);

    fn structure_hint(&self) -> StructureHint {
        StructureHint::Dense
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.apply_into(v, &mut out);
        out
    }

    /// Builds the dense matrix column by column. Fallback path only.
    fn materialize(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        let mut col = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, &mut col);
            m.column_mut(j).copy_from(&col);
            e[j] = 0.0;
        }
        m
    }
}

impl SymOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, self, v, 0.0);
    }

    fn materialize(&self) -> DMatrix<f64> {
        self.clone()
    }
}

impl SymOperator for SymMat {
    fn dim(&self) -> usize {
        SymMat::dim(self)
    }

    fn apply_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        self.matvec_acc(v, 1.0, out);
    }

    fn structure_hint(&self) -> StructureHint {
        if self.outers().is_empty() {
            StructureHint::Sparse
        } else {
            StructureHint::SparsePlusLowRank
        }
    }

    fn materialize(&self) -> DMatrix<f64> {
        self.to_dense()
    }
}

/// Eigenvalues in descending order with the matching orthonormal eigenvectors
/// as columns.
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// `P diag(λ) Pᵀ`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.values[k];
        }
        &scaled * self.vectors.transpose()
    }

    pub fn count_positive(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Full spectral decomposition of a dense symmetric matrix.
///
/// The input must be symmetric to `1e-10 * ||M||_F` and finite; it is
/// symmetrized exactly before factorization.
pub fn dense_eig(m: &DMatrix<f64>) -> Result<EigPairs> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m.ncols() });
    }
    let norm = m.norm();
    if !norm.is_finite() {
        for i in 0..n {
            for j in 0..n {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFinite { i, j });
                }
            }
        }
    }
    let tol = 1e-10 * norm;
    for i in 0..n {
        for j in 0..i {
            let dev = (m[(i, j)] - m[(j, i)]).abs();
            if dev > tol {
                return Err(Error::NotSymmetric { i, j, dev, tol });
            }
        }
    }
    let sym = 0.5 * (m + m.transpose());
    let se = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
    let values = DVector::from_fn(n, |k, _| se.eigenvalues[order[k]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        vectors.column_mut(k).copy_from(&se.eigenvectors.column(src));
    }
    Ok(EigPairs { values, vectors })
}

/// Low-rank factor `V` (n×r) with its positive eigenvalues; represents
/// `X = V Vᵀ` with `V = P diag(√λ)`.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    factor: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl PsdFactor {
    /// Keeps the strictly positive eigenpairs of `eig`.
    pub fn from_eig(eig: &EigPairs) -> PsdFactor {
        let r = eig.count_positive();
        let n = eig.dim();
        let mut factor = DMatrix::zeros(n, r);
        let mut eigvals = DVector::zeros(r);
        let mut c = 0;
        for k in 0..eig.len() {
            let lam = eig.values[k];
            if lam > 0.0 {
                let s = lam.sqrt();
                factor.column_mut(c).copy_from(&(&eig.vectors.column(k) * s));
                eigvals[c] = lam;
                c += 1;
            }
        }
        debug_assert_eq!(c, r);
        PsdFactor { factor, eigvals }
    }

    pub fn zero(n: usize) -> PsdFactor {
        PsdFactor { factor: DMatrix::zeros(n, 0), eigvals: DVector::zeros(0) }
    }

    pub fn new(factor: DMatrix<f64>, eigvals: DVector<f64>) -> Result<PsdFactor> {
        if factor.ncols() != eigvals.len() {
            return Err(Error::DimensionMismatch { expected: factor.ncols(), got: eigvals.len() });
        }
        if eigvals.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument("PsdFactor eigenvalues must be strictly positive".into()));
        }
        Ok(PsdFactor { factor, eigvals })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn trace(&self) -> f64 {
        self.eigvals.sum()
    }

    pub fn fro_norm_sq(&self) -> f64 {
        self.eigvals.iter().map(|v| v * v).sum()
    }

    pub fn fro_norm(&self) -> f64 {
        self.fro_norm_sq().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// Uniform scaling `X -> alpha X` (`alpha > 0`).
    pub fn scaled(&self, alpha: f64) -> PsdFactor {
        PsdFactor { factor: &self.factor * alpha.sqrt(), eigvals: &self.eigvals * alpha }
    }

    /// Numerical rank: eigenvalues above `rel_tol * λ_max`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        if self.eigvals.is_empty() {
            return 0;
        }
        let lmax = self.eigvals[0].max(self.eigvals.amax());
        self.eigvals.iter().filter(|&&v| v > rel_tol * lmax).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectMode {
    Full,
    Partial,
}

/// Euclidean projection onto the positive semidefinite cone,
/// `Π(M) = Σ max(0, λᵢ) pᵢ pᵢᵀ`, returned as its positive eigenpairs.
pub fn project_psd(m: &DMatrix<f64>, mode: ProjectMode) -> Result<PsdFactor> {
    match mode {
        ProjectMode::Full => Ok(PsdFactor::from_eig(&dense_eig(m)?)),
        ProjectMode::Partial => {
            let mut warm = EigWarm::new(0);
            let (factor, _) = project_psd_partial(m, &mut warm, 1e-10)?;
            Ok(factor)
        }
    }
}

/// Huber smoothing `φ(ε, v)` of `max(0, v)`: identity above the band
/// `[-ε/2, ε/2]`, quadratic inside, zero below. `φ(0, v) = max(0, v)`.
pub fn huber(eps: f64, v: f64) -> Result<f64> {
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("huber: eps must be >= 0, got {eps}")));
    }
    Ok(huber_unchecked(eps, v))
}

#[inline]
pub(crate) fn huber_unchecked(eps: f64, v: f64) -> f64 {
    if v > 0.5 * eps {
        v
    } else if v < -0.5 * eps {
        0.0
    } else if eps == 0.0 {
        // v == 0 here
        0.0
    } else {
        let t = v + 0.5 * eps;
        t * t / (2.0 * eps)
    }
}

/// Partial derivatives `(∂φ/∂ε, ∂φ/∂v)`; rejected at `ε = 0` where the
/// smoothing is not differentiable.
pub fn huber_partials(eps: f64, v: f64) -> Result<(f64, f64)> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("huber_partials: eps must be > 0, got {eps}")));
    }
    Ok((huber_deps(eps, v), huber_dv(eps, v)))
}

#[inline]
pub(crate) fn huber_deps(eps: f64, v: f64) -> f64 {
    if v.abs() <= 0.5 * eps {
        let t = v / eps;
        0.125 - 0.5 * t * t
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn huber_dv(eps: f64, v: f64) -> f64 {
    if v > 0.5 * eps {
        1.0
    } else if v < -0.5 * eps {
        0.0
    } else {
        0.5 + v / eps
    }
}

/// Full factorization of the smoothed projection
/// `Π̃(ε, M) = Σ φ(ε, λᵢ) pᵢ pᵢᵀ`. At `ε = 0` this equals `project_psd`.
#[derive(Debug, Clone)]
pub struct SmoothProjection {
    pub eig: EigPairs,
    /// `φ(ε, λᵢ)` for every eigenvalue, same order as `eig.values`.
    pub phi: DVector<f64>,
    pub eps: f64,
}

impl SmoothProjection {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut scaled = self.eig.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.phi[k];
        }
        &scaled * self.eig.vectors.transpose()
    }

    pub fn fro_norm_sq(&self) -> f64 {
        self.phi.iter().map(|v| v * v).sum()
    }

    /// Positive part as a factor (entries with `φ > 0`).
    pub fn psd_factor(&self) -> PsdFactor {
        let pairs = EigPairs { values: self.phi.clone(), vectors: self.eig.vectors.clone() };
        PsdFactor::from_eig(&pairs)
    }
}

pub fn smooth_project_psd(eps: f64, m: &DMatrix<f64>) -> Result<SmoothProjection> {
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("smooth_project_psd: eps must be >= 0, got {eps}")));
    }
    let eig = dense_eig(m)?;
    Ok(smooth_project_from_eig(eps, eig))
}

pub fn smooth_project_from_eig(eps: f64, eig: EigPairs) -> SmoothProjection {
    let phi = DVector::from_fn(eig.len(), |k, _| huber_unchecked(eps, eig.values[k]));
    SmoothProjection { eig, phi, eps }
}

/// Relative gap below which two eigenvalues are treated as coincident when
/// forming divided differences; avoids catastrophic cancellation.
const OMEGA_COINCIDE_TOL: f64 = 1e-12;

#[inline]
fn omega_entry(eps: f64, li: f64, lj: f64) -> f64 {
    let scale = 1.0f64.max(li.abs()).max(lj.abs());
    if (li - lj).abs() <= OMEGA_COINCIDE_TOL * scale {
        huber_dv(eps, 0.5 * (li + lj))
    } else {
        (huber_unchecked(eps, li) - huber_unchecked(eps, lj)) / (li - lj)
    }
}

/// Directional derivative of the smoothed projection at the matrix whose
/// eigendecomposition is `eig`, in direction `H`:
/// `P (Ω(ε, λ) ∘ (Pᵀ H P)) Pᵀ`.
///
/// `Ω` vanishes where both eigenvalues lie below `-ε/2`, so with the spectrum
/// sorted descending only the leading `s` rows/columns are touched and the
/// cost is `O(n² s)`.
pub fn omega_apply(eps: f64, eig: &EigPairs, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("omega_apply: eps must be > 0, got {eps}")));
    }
    let n = eig.dim();
    if eig.len() != n {
        return Err(Error::InvalidArgument("omega_apply requires a full eigendecomposition".into()));
    }
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.nrows() });
    }
    // Active prefix: eigenvalues with φ or its slope possibly nonzero.
    let band = -0.5 * eps;
    let s = eig.values.iter().take_while(|&&l| l >= band).count();
    if s == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let p = &eig.vectors;
    let p1 = p.columns(0, s);
    // W = P₁ᵀ H P  (s × n)
    let w = (p1.transpose() * h) * p;
    // R = Ω[0..s, :] ∘ W
    let mut r = w;
    for i in 0..s {
        for j in 0..n {
            r[(i, j)] *= omega_entry(eps, eig.values[i], eig.values[j]);
        }
    }
    // N = Ê + Êᵀ − topleft(N₁₁)  where Ê embeds R as the first s rows.
    let b = p1 * (&r * p.transpose());
    let n11 = r.columns(0, s).into_owned();
    let correction = p1 * (&n11 * p1.transpose());
    Ok(&b + b.transpose() - correction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_sym(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        0.5 * (&g + g.transpose())
    }

    #[test]
    fn dense_eig_identity() {
        let eig = dense_eig(&DMatrix::identity(3, 3)).unwrap();
        for v in eig.values.iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let ortho = eig.vectors.transpose() * &eig.vectors;
        assert!((ortho - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn dense_eig_diagonal_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0]));
        let eig = dense_eig(&m).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] + 1.0).abs() < 1e-14);
        // eigenvectors are signed axis vectors
        assert!((eig.vectors.column(0).amax() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_eig_reconstructs() {
        let m = random_sym(7, 3);
        let eig = dense_eig(&m).unwrap();
        assert!((eig.reconstruct() - &m).norm() <= 1e-8 * m.norm().max(1.0));
        let ortho = eig.vectors.transpose() * &eig.vectors;
        assert!((ortho - DMatrix::identity(7, 7)).norm() < 1e-10);
    }

    #[test]
    fn dense_eig_rejects_bad_input() {
        let mut m = random_sym(4, 5);
        m[(1, 2)] += 1.0;
        assert!(matches!(dense_eig(&m), Err(Error::NotSymmetric { .. })));
        let mut m = random_sym(4, 6);
        m[(0, 0)] = f64::NAN;
        assert!(dense_eig(&m).is_err());
    }

    #[test]
    fn project_splits_signs() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let x = project_psd(&m, ProjectMode::Full).unwrap();
        assert_eq!(x.rank(), 1);
        let d = x.to_dense();
        assert!((d[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(d[(1, 1)].abs() < 1e-14);
    }

    #[test]
    fn project_fixes_psd_matrices() {
        let g = random_sym(5, 9);
        let m = &g * g.transpose();
        let x = project_psd(&m, ProjectMode::Full).unwrap();
        assert!((x.to_dense() - &m).norm() < 1e-9 * m.norm().max(1.0));
    }

    #[test]
    fn projection_distance_identity() {
        let m = random_sym(4, 11);
        let eig = dense_eig(&m).unwrap();
        let expect: f64 = eig.values.iter().map(|&l| l.min(0.0).powi(2)).sum();
        let x = project_psd(&m, ProjectMode::Full).unwrap();
        let dist = (x.to_dense() - &m).norm_squared();
        assert!((dist - expect).abs() < 1e-10 * expect.max(1.0));
    }

    #[test]
    fn huber_limits_and_values() {
        assert_eq!(huber(0.0, -3.0).unwrap(), 0.0);
        assert_eq!(huber(0.0, 2.0).unwrap(), 2.0);
        assert!((huber(1.0, 0.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((huber(0.2, 0.09).unwrap() - 0.090250).abs() < 1e-15);
        assert!(huber(-0.1, 0.0).is_err());
    }

    #[test]
    fn huber_partials_values() {
        assert_eq!(huber_partials(1.0, 10.0).unwrap(), (0.0, 1.0));
        let (de, dv) = huber_partials(1.0, 0.0).unwrap();
        assert!((de - 0.125).abs() < 1e-15);
        assert!((dv - 0.5).abs() < 1e-15);
        assert!(huber_partials(0.0, 1.0).is_err());
    }

    #[test]
    fn huber_partials_match_finite_differences() {
        let h = 1e-6;
        for &(eps, v) in &[(0.5, 0.1), (0.3, -0.1), (1.0, 0.49), (2.0, 3.0)] {
            let (de, dv) = huber_partials(eps, v).unwrap();
            let fd_e = (huber(eps + h, v).unwrap() - huber(eps - h, v).unwrap()) / (2.0 * h);
            let fd_v = (huber(eps, v + h).unwrap() - huber(eps, v - h).unwrap()) / (2.0 * h);
            assert!((de - fd_e).abs() < 1e-6, "deps: {de} vs {fd_e}");
            assert!((dv - fd_v).abs() < 1e-6, "dv: {dv} vs {fd_v}");
        }
    }

    #[test]
    fn smooth_projection_reduces_to_hard() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let s = smooth_project_psd(0.0, &m).unwrap();
        assert!((s.to_dense() - project_psd(&m, ProjectMode::Full).unwrap().to_dense()).norm() < 1e-14);

        let s4 = smooth_project_psd(4.0, &m).unwrap();
        let d = s4.to_dense();
        assert!((d[(0, 0)] - 9.0 / 8.0).abs() < 1e-12);
        assert!((d[(1, 1)] - 1.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_projection_within_band_bound() {
        let n = 4;
        let m = random_sym(n, 21);
        let eps = 0.1;
        let s = smooth_project_psd(eps, &m).unwrap();
        let hard = project_psd(&m, ProjectMode::Full).unwrap();
        let gap = (s.to_dense() - hard.to_dense()).norm();
        assert!(gap <= n as f64 * eps / 8.0 + 1e-12, "gap {gap}");
    }

    #[test]
    fn omega_zero_direction_and_identity_region() {
        let m = random_sym(4, 31);
        let eig = dense_eig(&m).unwrap();
        let zero = omega_apply(0.5, &eig, &DMatrix::zeros(4, 4)).unwrap();
        assert!(zero.norm() < 1e-14);

        // all eigenvalues above ε/2: derivative is the identity map
        let shifted = &m + DMatrix::identity(4, 4) * (eig.values[3].abs() + 10.0);
        let eig2 = dense_eig(&shifted).unwrap();
        let h = random_sym(4, 32);
        let out = omega_apply(0.5, &eig2, &h).unwrap();
        assert!((out - &h).norm() < 1e-10);
    }

    #[test]
    fn omega_matches_finite_difference() {
        let m = random_sym(4, 41);
        let h = random_sym(4, 42);
        let eps = 0.3;
        let eig = dense_eig(&m).unwrap();
        let out = omega_apply(eps, &eig, &h).unwrap();
        let delta = 1e-6;
        let plus = smooth_project_psd(eps, &(&m + &h * delta)).unwrap().to_dense();
        let minus = smooth_project_psd(eps, &(&m - &h * delta)).unwrap().to_dense();
        let fd = (plus - minus) / (2.0 * delta);
        assert!((out - fd).norm() < 1e-5, "finite-difference mismatch");
    }

    #[test]
    fn omega_is_self_adjoint() {
        let m = random_sym(5, 51);
        let eig = dense_eig(&m).unwrap();
        let h1 = random_sym(5, 52);
        let h2 = random_sym(5, 53);
        let a = omega_apply(0.2, &eig, &h1).unwrap();
        let b = omega_apply(0.2, &eig, &h2).unwrap();
        let lhs = a.component_mul(&h2).sum();
        let rhs = h1.component_mul(&b).sum();
        assert!((lhs - rhs).abs() < 1e-8);
    }

    #[test]
    fn psd_factor_spherical_constraint() {
        for seed in 0..10 {
            let m = random_sym(6, 100 + seed);
            let x = project_psd(&m, ProjectMode::Full).unwrap();
            assert!(x.fro_norm() <= x.trace() + 1e-9);
        }
        // rank-1 equality case
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        let x = project_psd(&m, ProjectMode::Full).unwrap();
        assert!((x.fro_norm() - x.trace()).abs() < 1e-9);
        assert_eq!(x.rank(), 1);
    }
}
