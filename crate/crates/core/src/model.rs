//! Binary quadratic programs, their homogenized semidefinite form, and the
//! linear constraint maps `Φ[X] = [<B₁,X> … <B_m,X>]` and `Ψ(u) = Σ uᵢBᵢ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{PsdFactor, StructureHint, SymMat, SymOperator};

pub const DEFAULT_GAMMA: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarDomain {
    /// x ∈ {−1, +1}ⁿ
    PlusMinusOne,
    /// x ∈ {0, 1}ⁿ
    ZeroOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Eq,
    /// `≤` inequality.
    Ineq,
}

/// Rounding family an instance belongs to; used to pick a discretizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Generic,
    Bisection,
    ThresholdBalance { kappa: f64 },
    Matching { k: usize, l: usize },
    PartialGrouping,
}

/// One quadratic constraint `xᵀ A x + aᵀ x {=, ≤} b`.
#[derive(Debug, Clone)]
pub struct BqpConstraint {
    pub quad: SymMat,
    pub lin: DVector<f64>,
    pub rhs: f64,
    pub kind: ConstraintKind,
}

/// Binary quadratic program `min xᵀA₀x + a₀ᵀx + offset` over the binary cube,
/// subject to quadratic equality and inequality constraints.
#[derive(Debug, Clone)]
pub struct BqpInstance {
    pub n: usize,
    pub quad: SymMat,
    pub lin: DVector<f64>,
    pub offset: f64,
    pub constraints: Vec<BqpConstraint>,
    pub domain: VarDomain,
    pub family: Family,
}

impl BqpInstance {
    pub fn new(n: usize, quad: SymMat, lin: DVector<f64>, domain: VarDomain) -> Result<Self> {
        if quad.dim() != n || lin.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: quad.dim().max(lin.len()) });
        }
        Ok(BqpInstance {
            n,
            quad,
            lin,
            offset: 0.0,
            constraints: Vec::new(),
            domain,
            family: Family::Generic,
        })
    }

    pub fn push_constraint(&mut self, c: BqpConstraint) -> Result<()> {
        if c.quad.dim() != self.n || c.lin.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: c.quad.dim().max(c.lin.len()) });
        }
        self.constraints.push(c);
        Ok(())
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.quad.quad_form(x) + self.lin.dot(x) + self.offset
    }

    pub fn constraint_values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.constraints.iter().map(|c| c.quad.quad_form(x) + c.lin.dot(x)).collect()
    }

    /// Checks every constraint at `x` to absolute tolerance `tol`.
    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.constraints.iter().all(|c| {
            let v = c.quad.quad_form(x) + c.lin.dot(x);
            match c.kind {
                ConstraintKind::Eq => (v - c.rhs).abs() <= tol,
                ConstraintKind::Ineq => v <= c.rhs + tol,
            }
        })
    }

    /// Checks that `x` takes values in the instance domain.
    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        let (lo, hi) = match self.domain {
            VarDomain::PlusMinusOne => (-1.0, 1.0),
            VarDomain::ZeroOne => (0.0, 1.0),
        };
        x.iter().all(|&v| v == lo || v == hi)
    }

    /// Exact conversion to the ±1 domain via `x = (y + 1)/2`; the objective
    /// and constraint values are preserved pointwise (constants are folded
    /// into `offset` and the right-hand sides).
    pub fn to_plus_minus_one(&self) -> Result<BqpInstance> {
        if self.domain == VarDomain::PlusMinusOne {
            return Ok(self.clone());
        }
        let convert = |quad: &SymMat, lin: &DVector<f64>| -> Result<(SymMat, DVector<f64>, f64)> {
            // xᵀQx + aᵀx at x = (y+1)/2:
            //   (1/4) yᵀQy + ((Q1)/2 + a/2)ᵀ y + (1ᵀQ1)/4 + (aᵀ1)/2
            let ones = DVector::repeat(self.n, 1.0);
            let q1 = quad.matvec(&ones);
            let mut q = quad.clone();
            q.scale(0.25);
            let new_lin = &q1 * 0.5 + lin * 0.5;
            let constant = 0.25 * ones.dot(&q1) + 0.5 * lin.sum();
            Ok((q, new_lin, constant))
        };
        let (quad, lin, c0) = convert(&self.quad, &self.lin)?;
        let mut out = BqpInstance {
            n: self.n,
            quad,
            lin,
            offset: self.offset + c0,
            constraints: Vec::new(),
            domain: VarDomain::PlusMinusOne,
            family: self.family,
        };
        for c in &self.constraints {
            let (quad, lin, cc) = convert(&c.quad, &c.lin)?;
            out.constraints.push(BqpConstraint { quad, lin, rhs: c.rhs - cc, kind: c.kind });
        }
        Ok(out)
    }
}

/// Frobenius scaling applied by [`normalize`]; enough to express solver
/// bounds on the original problem scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub cost: f64,
    pub cons: Vec<f64>,
}

impl ScaleRecord {
    fn identity(m: usize) -> Self {
        ScaleRecord { cost: 1.0, cons: vec![1.0; m] }
    }
}

/// Homogenized semidefinite problem
/// `min <X, A> + ||X||²/(2γ)  s.t.  <Bᵢ, X> {=, ≤} bᵢ,  X ⪰ 0`.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    dim: usize,
    pub cost: SymMat,
    pub cons: Vec<SymMat>,
    pub rhs: DVector<f64>,
    pub kinds: Vec<ConstraintKind>,
    pub gamma: f64,
    pub scale: ScaleRecord,
    /// Whether index 0 is the homogenizing coordinate.
    pub homogenized: bool,
    /// `trace(X*)` of the unregularized optimum, pinned by the constraints;
    /// enters the lower bound as `d_γ(u) − trace²/(2γ)`.
    pub trace_bound: f64,
    /// Constant added to the objective after de-normalization.
    pub objective_offset: f64,
    pub structure: StructureHint,
}

impl SdpProblem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_constraints(&self) -> usize {
        self.cons.len()
    }

    pub fn eq_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds.iter().enumerate().filter(|(_, k)| **k == ConstraintKind::Eq).map(|(i, _)| i)
    }

    pub fn ineq_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds.iter().enumerate().filter(|(_, k)| **k == ConstraintKind::Ineq).map(|(i, _)| i)
    }

    pub fn has_inequalities(&self) -> bool {
        self.kinds.iter().any(|k| *k == ConstraintKind::Ineq)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// `Φ[V Vᵀ]`
    pub fn phi_factor(&self, factor: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.cons.len(), |i, _| self.cons[i].inner_factor(factor))
    }

    /// `Φ[X]` for dense symmetric `X`.
    pub fn phi_dense(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.cons.len(), |i, _| self.cons[i].inner_dense(x))
    }

    /// `out += alpha * Ψ(u) = alpha * Σ uᵢ Bᵢ` densely.
    pub fn psi_acc_dense(&self, u: &DVector<f64>, alpha: f64, out: &mut DMatrix<f64>) {
        for (i, b) in self.cons.iter().enumerate() {
            if u[i] != 0.0 {
                b.add_to_dense(alpha * u[i], out);
            }
        }
    }

    pub fn psi_dense(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.psi_acc_dense(u, 1.0, &mut out);
        out
    }

    /// `C(u) = −A − Ψ(u)` as a dense matrix.
    pub fn c_dense(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.cost.add_to_dense(-1.0, &mut out);
        self.psi_acc_dense(u, -1.0, &mut out);
        out
    }

    /// `C(u)` as a matrix-free operator with a matvec counter.
    pub fn c_operator<'a>(&'a self, u: &'a DVector<f64>) -> COperator<'a> {
        COperator { p: self, u, count: std::cell::Cell::new(0) }
    }

    /// Evaluates the (normalized) primal objective, its regularized value and
    /// the constraint residuals `<Bᵢ,X> − bᵢ` split into equality and
    /// inequality parts.
    pub fn evaluate_primal(&self, x: PrimalView<'_>) -> Result<PrimalEvaluation> {
        let (objective, fro_sq, phi) = match x {
            PrimalView::Factor(f) => {
                if f.dim() != self.dim {
                    return Err(Error::DimensionMismatch { expected: self.dim, got: f.dim() });
                }
                (self.cost.inner_factor(f.factor()), f.fro_norm_sq(), self.phi_factor(f.factor()))
            }
            PrimalView::Dense(m) => {
                if m.nrows() != self.dim || m.ncols() != self.dim {
                    return Err(Error::DimensionMismatch { expected: self.dim, got: m.nrows() });
                }
                (self.cost.inner_dense(m), m.norm_squared(), self.phi_dense(m))
            }
        };
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        for i in 0..self.cons.len() {
            let r = phi[i] - self.rhs[i];
            match self.kinds[i] {
                ConstraintKind::Eq => eq.push(r),
                ConstraintKind::Ineq => ineq.push(r),
            }
        }
        Ok(PrimalEvaluation {
            objective,
            regularized: objective + fro_sq / (2.0 * self.gamma),
            eq_residuals: eq,
            ineq_residuals: ineq,
        })
    }
}

pub enum PrimalView<'a> {
    Factor(&'a PsdFactor),
    Dense(&'a DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct PrimalEvaluation {
    pub objective: f64,
    pub regularized: f64,
    pub eq_residuals: Vec<f64>,
    pub ineq_residuals: Vec<f64>,
}

/// Matrix-free `C(u)` with a matvec counter, for the Lanczos path.
pub struct COperator<'a> {
    p: &'a SdpProblem,
    u: &'a DVector<f64>,
    count: std::cell::Cell<usize>,
}

impl COperator<'_> {
    pub fn matvec_count(&self) -> usize {
        self.count.get()
    }
}

impl SymOperator for COperator<'_> {
    fn dim(&self) -> usize {
        self.p.dim
    }

    fn apply_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        self.count.set(self.count.get() + 1);
        out.fill(0.0);
        self.p.cost.matvec_acc(v, -1.0, out);
        for (i, b) in self.p.cons.iter().enumerate() {
            if self.u[i] != 0.0 {
                b.matvec_acc(v, -self.u[i], out);
            }
        }
    }

    fn structure_hint(&self) -> StructureHint {
        self.p.structure
    }

    fn materialize(&self) -> DMatrix<f64> {
        self.p.c_dense(self.u)
    }
}

/// Homogenizes a ±1 BQP into the standard semidefinite form.
///
/// Purely quadratic instances (no linear terms anywhere) stay at dimension
/// `n` with constraints `diag(X) = 1` plus one row per BQP constraint.
/// Otherwise the problem is lifted to `X̄ = [[1, xᵀ], [x, X]]` of dimension
/// `n + 1`: linear terms enter the border with factor 1/2, so that
/// `x̄ᵀ Ā x̄ = xᵀA₀x + a₀ᵀx` exactly on rank-one feasible points.
pub fn homogenize(bqp: &BqpInstance) -> Result<SdpProblem> {
    if bqp.domain != VarDomain::PlusMinusOne {
        return Err(Error::InvalidArgument(
            "homogenize expects a ±1 instance; convert with to_plus_minus_one first".into(),
        ));
    }
    let n = bqp.n;
    if n == 0 {
        return Err(Error::InvalidArgument("empty instance".into()));
    }
    let lin_free = bqp.lin.iter().all(|&v| v == 0.0)
        && bqp.constraints.iter().all(|c| c.lin.iter().all(|&v| v == 0.0));

    let (dim, cost, homogenized) = if lin_free {
        (n, bqp.quad.clone(), false)
    } else {
        let mut cost = bqp.quad.embedded(n + 1, 1);
        let border: Vec<(usize, usize, f64)> = (0..n)
            .filter(|&j| bqp.lin[j] != 0.0)
            .map(|j| (j + 1, 0, 0.5 * bqp.lin[j]))
            .collect();
        let border = SymMat::from_triplets(n + 1, border)?;
        cost = merge(cost, border)?;
        (n + 1, cost, true)
    };

    let mut cons = Vec::new();
    let mut rhs = Vec::new();
    let mut kinds = Vec::new();
    for i in 0..dim {
        cons.push(SymMat::unit(dim, i, i, 1.0)?);
        rhs.push(1.0);
        kinds.push(ConstraintKind::Eq);
    }
    for c in &bqp.constraints {
        let b = if homogenized {
            let mut quad = c.quad.embedded(dim, 1);
            let border: Vec<(usize, usize, f64)> = (0..n)
                .filter(|&j| c.lin[j] != 0.0)
                .map(|j| (j + 1, 0, 0.5 * c.lin[j]))
                .collect();
            quad = merge(quad, SymMat::from_triplets(dim, border)?)?;
            quad
        } else {
            c.quad.clone()
        };
        cons.push(b);
        rhs.push(c.rhs);
        kinds.push(c.kind);
    }

    let structure = infer_structure(&cost, &cons, dim);
    Ok(SdpProblem {
        dim,
        cost,
        cons,
        rhs: DVector::from_vec(rhs),
        kinds,
        gamma: DEFAULT_GAMMA,
        scale: ScaleRecord::identity(dim + bqp.constraints.len()),
        homogenized,
        trace_bound: dim as f64,
        objective_offset: bqp.offset,
        structure,
    })
}

fn merge(a: SymMat, b: SymMat) -> Result<SymMat> {
    let n = a.dim();
    let mut entries: Vec<(usize, usize, f64)> = a.triplets().iter().collect();
    entries.extend(b.triplets().iter());
    let mut out = SymMat::from_triplets(n, entries)?;
    for t in a.outers().iter().chain(b.outers().iter()) {
        out.push_outer(t.clone())?;
    }
    Ok(out)
}

fn infer_structure(cost: &SymMat, cons: &[SymMat], dim: usize) -> StructureHint {
    let dense_threshold = dim * dim / 4;
    if cost.triplets().nnz() > dense_threshold {
        return StructureHint::Dense;
    }
    if cost.outers().is_empty() && cons.iter().all(|c| c.outers().is_empty()) {
        StructureHint::Sparse
    } else {
        StructureHint::SparsePlusLowRank
    }
}

/// Manual constructor for problems already in semidefinite form (used by the
/// application-specific relaxations).
pub struct SdpBuilder {
    dim: usize,
    cost: SymMat,
    cons: Vec<SymMat>,
    rhs: Vec<f64>,
    kinds: Vec<ConstraintKind>,
    homogenized: bool,
    trace_bound: f64,
    objective_offset: f64,
}

impl SdpBuilder {
    pub fn new(dim: usize, cost: SymMat) -> Self {
        let trace = dim as f64;
        SdpBuilder {
            dim,
            cost,
            cons: Vec::new(),
            rhs: Vec::new(),
            kinds: Vec::new(),
            homogenized: false,
            trace_bound: trace,
            objective_offset: 0.0,
        }
    }

    pub fn homogenized(mut self, yes: bool) -> Self {
        self.homogenized = yes;
        self
    }

    pub fn trace_bound(mut self, t: f64) -> Self {
        self.trace_bound = t;
        self
    }

    pub fn objective_offset(mut self, v: f64) -> Self {
        self.objective_offset = v;
        self
    }

    pub fn constraint(mut self, b: SymMat, rhs: f64, kind: ConstraintKind) -> Self {
        self.cons.push(b);
        self.rhs.push(rhs);
        self.kinds.push(kind);
        self
    }

    pub fn build(self) -> Result<SdpProblem> {
        for (i, c) in self.cons.iter().enumerate() {
            if c.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: c.dim() })
                    .map_err(|e| {
                        log::error!("constraint {i} has wrong dimension");
                        e
                    });
            }
        }
        let m = self.cons.len();
        let structure = infer_structure(&self.cost, &self.cons, self.dim);
        Ok(SdpProblem {
            dim: self.dim,
            cost: self.cost,
            cons: self.cons,
            rhs: DVector::from_vec(self.rhs),
            kinds: self.kinds,
            gamma: DEFAULT_GAMMA,
            scale: ScaleRecord::identity(m),
            homogenized: self.homogenized,
            trace_bound: self.trace_bound,
            objective_offset: self.objective_offset,
            structure,
        })
    }
}

/// Scales the cost and every constraint matrix to unit Frobenius norm,
/// rescaling right-hand sides by the same factors. The feasible set is
/// unchanged and `scale_record` suffices to de-normalize bounds.
pub fn normalize(p: &SdpProblem) -> Result<SdpProblem> {
    let cost_norm = p.cost.fro_norm();
    if cost_norm == 0.0 {
        return Err(Error::ZeroMatrix { index: None });
    }
    let mut out = p.clone();
    out.cost.scale(1.0 / cost_norm);
    let mut cons_scales = Vec::with_capacity(p.cons.len());
    for (i, b) in out.cons.iter_mut().enumerate() {
        let norm = b.fro_norm();
        if norm == 0.0 {
            return Err(Error::ZeroMatrix { index: Some(i) });
        }
        b.scale(1.0 / norm);
        out.rhs[i] /= norm;
        cons_scales.push(p.scale.cons[i] * norm);
    }
    out.scale = ScaleRecord { cost: p.scale.cost * cost_norm, cons: cons_scales };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(v: i32) -> f64 {
        v as f64
    }

    /// All sign vectors of length n.
    pub fn sign_vectors(n: usize) -> impl Iterator<Item = DVector<f64>> {
        (0..(1usize << n)).map(move |mask| {
            DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
        })
    }

    #[test]
    fn one_variable_linear() {
        // minimize 2x over {±1}: optimum −2 at x = −1
        let bqp = BqpInstance::new(
            1,
            SymMat::zeros(1),
            DVector::from_vec(vec![2.0]),
            VarDomain::PlusMinusOne,
        )
        .unwrap();
        let p = homogenize(&bqp).unwrap();
        assert_eq!(p.dim(), 2);
        assert!(p.homogenized);
        let best = sign_vectors(1).map(|x| bqp.objective(&x)).fold(f64::INFINITY, f64::min);
        assert_eq!(best, -2.0);
        // rank-one evaluation through the homogenized cost agrees
        let xbar = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(p.cost.quad_form(&xbar), -2.0);
    }

    #[test]
    fn pure_quadratic_stays_unbordered() {
        let quad = SymMat::from_triplets(2, [(1, 0, -1.0)]).unwrap();
        let bqp =
            BqpInstance::new(2, quad, DVector::zeros(2), VarDomain::PlusMinusOne).unwrap();
        let p = homogenize(&bqp).unwrap();
        assert_eq!(p.dim(), 2);
        assert!(!p.homogenized);
        assert_eq!(p.num_constraints(), 2);
        let best = sign_vectors(2).map(|x| bqp.objective(&x)).fold(f64::INFINITY, f64::min);
        assert_eq!(best, -2.0); // x = (1, -1) or (-1, 1)
    }

    #[test]
    fn homogenization_matches_bqp_on_all_sign_vectors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 8;
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                entries.push((i, j, rng.random::<f64>() * 2.0 - 1.0));
            }
        }
        let quad = SymMat::from_triplets(n, entries).unwrap();
        let lin = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut bqp = BqpInstance::new(n, quad, lin, VarDomain::PlusMinusOne).unwrap();
        for kind in [ConstraintKind::Eq, ConstraintKind::Eq, ConstraintKind::Ineq] {
            let cq = SymMat::from_triplets(n, [(2, 1, rng.random::<f64>()), (5, 5, 1.0)]).unwrap();
            let cl = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            bqp.push_constraint(BqpConstraint { quad: cq, lin: cl, rhs: 0.3, kind }).unwrap();
        }
        let p = homogenize(&bqp).unwrap();
        assert_eq!(p.dim(), n + 1);
        for x in sign_vectors(n) {
            let mut xbar = DVector::zeros(n + 1);
            xbar[0] = 1.0;
            xbar.rows_mut(1, n).copy_from(&x);
            let obj = p.cost.quad_form(&xbar);
            assert!((obj - (bqp.objective(&x) - bqp.offset)).abs() < 1e-12);
            for (ci, c) in bqp.constraints.iter().enumerate() {
                let hom = p.cons[n + 1 + ci].quad_form(&xbar);
                let direct = c.quad.quad_form(&x) + c.lin.dot(&x);
                assert!((hom - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_one_round_trip_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 6;
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                entries.push((i, j, rng.random::<f64>() - 0.5));
            }
        }
        let quad = SymMat::from_triplets(n, entries).unwrap();
        let lin = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let zo = BqpInstance::new(n, quad, lin, VarDomain::ZeroOne).unwrap();
        let pm1 = zo.to_plus_minus_one().unwrap();
        for mask in 0..(1usize << n) {
            let x01 = DVector::from_fn(n, |i, _| pm((mask >> i & 1) as i32));
            let y = DVector::from_fn(n, |i, _| 2.0 * x01[i] - 1.0);
            assert!((zo.objective(&x01) - pm1.objective(&y)).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_scales_and_records() {
        let quad = SymMat::from_triplets(2, [(0, 0, 4.0)]).unwrap(); // ||A||_F = 4
        let bqp =
            BqpInstance::new(2, quad, DVector::zeros(2), VarDomain::PlusMinusOne).unwrap();
        let p = homogenize(&bqp).unwrap();
        let q = normalize(&p).unwrap();
        assert!((q.cost.fro_norm() - 1.0).abs() < 1e-14);
        assert!((q.scale.cost - 4.0).abs() < 1e-14);
        for b in &q.cons {
            assert!((b.fro_norm() - 1.0).abs() < 1e-14);
        }
        // already-normalized problem is a fixed point
        let r = normalize(&q).unwrap();
        assert!((r.scale.cost - q.scale.cost).abs() < 1e-14);
        assert!((r.cost.fro_norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn evaluate_primal_basics() {
        let quad = SymMat::identity(3);
        let bqp =
            BqpInstance::new(3, quad, DVector::zeros(3), VarDomain::PlusMinusOne).unwrap();
        let p = normalize(&homogenize(&bqp).unwrap()).unwrap().with_gamma(1.0).unwrap();
        let nb = p.dim() as f64;

        // X = 0
        let zero = PsdFactor::zero(p.dim());
        let ev = p.evaluate_primal(PrimalView::Factor(&zero)).unwrap();
        assert_eq!(ev.objective, 0.0);
        assert_eq!(ev.regularized, 0.0);
        for (r, b) in ev.eq_residuals.iter().zip(p.rhs.iter()) {
            assert_eq!(*r, -b);
        }

        // X = I with A = I/||I||_F: objective √n̄, regularized + n̄/2
        let ident = DMatrix::identity(p.dim(), p.dim());
        let ev = p.evaluate_primal(PrimalView::Dense(&ident)).unwrap();
        assert!((ev.objective - nb.sqrt()).abs() < 1e-12);
        assert!((ev.regularized - (nb.sqrt() + nb / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn primal_factor_matches_dense_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 5;
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                entries.push((i, j, rng.random::<f64>() - 0.5));
            }
        }
        let quad = SymMat::from_triplets(n, entries).unwrap();
        let lin = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let bqp = BqpInstance::new(n, quad, lin, VarDomain::PlusMinusOne).unwrap();
        let p = normalize(&homogenize(&bqp).unwrap()).unwrap();
        let g = DMatrix::from_fn(p.dim(), p.dim(), |_, _| rng.random::<f64>() - 0.5);
        let sym = 0.5 * (&g + g.transpose());
        let f = crate::linalg::project_psd(&sym, crate::linalg::ProjectMode::Full).unwrap();
        let dense = f.to_dense();
        let a = p.evaluate_primal(PrimalView::Factor(&f)).unwrap();
        let b = p.evaluate_primal(PrimalView::Dense(&dense)).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-12);
        assert!((a.regularized - b.regularized).abs() < 1e-12);
    }

    #[test]
    fn adjointness_of_phi_and_psi() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let quad = SymMat::from_triplets(4, [(1, 0, 1.0), (3, 2, -2.0)]).unwrap();
        let mut bqp =
            BqpInstance::new(4, quad, DVector::zeros(4), VarDomain::PlusMinusOne).unwrap();
        let mut grouping = SymMat::zeros(4);
        grouping
            .push_outer(crate::linalg::OuterTerm::symmetric(
                1.0,
                DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
            ))
            .unwrap();
        bqp.push_constraint(BqpConstraint {
            quad: grouping,
            lin: DVector::zeros(4),
            rhs: 0.0,
            kind: ConstraintKind::Eq,
        })
        .unwrap();
        let p = homogenize(&bqp).unwrap();
        let m = p.num_constraints();
        for _ in 0..20 {
            let g = DMatrix::from_fn(p.dim(), p.dim(), |_, _| rng.random::<f64>() - 0.5);
            let x = 0.5 * (&g + g.transpose());
            let u = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
            let lhs = p.phi_dense(&x).dot(&u);
            let rhs = x.component_mul(&p.psi_dense(&u)).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
