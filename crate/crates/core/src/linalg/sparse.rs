//! Sparse symmetric matrices in canonical triplet form, optionally augmented
//! with symmetric rank-one ("outer product") terms.
//!
//! Constraint matrices of the problems handled here are either very sparse
//! (a handful of entries) or of the form `c * s sᵀ` with a dense vector `s`
//! (balance and grouping constraints). Storing the outer factors keeps
//! matrix-vector products and inner products linear in `n` instead of `n²`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Canonical sparse symmetric triplets: lower triangle only (`row >= col`),
/// sorted by `(row, col)`, duplicates summed, explicit zeros dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymTriplets {
    n: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SymTriplets {
    pub fn zeros(n: usize) -> Self {
        SymTriplets { n, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    /// Builds from arbitrary `(i, j, v)` entries. Each unordered pair must be
    /// given once; `(i, j)` and `(j, i)` refer to the same entry and are
    /// summed together like duplicates.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut flat: Vec<(u32, u32, f64)> = Vec::new();
        for (i, j, v) in entries {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch { expected: n, got: i.max(j) + 1 });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite { i, j });
            }
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            flat.push((r as u32, c as u32, v));
        }
        flat.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut out = SymTriplets::zeros(n);
        for (r, c, v) in flat {
            if let (Some(&lr), Some(&lc)) = (out.rows.last(), out.cols.last()) {
                if lr == r && lc == c {
                    *out.vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            out.rows.push(r);
            out.cols.push(c);
            out.vals.push(v);
        }
        // Drop entries that cancelled exactly.
        let mut k = 0;
        for idx in 0..out.vals.len() {
            if out.vals[idx] != 0.0 {
                out.rows[k] = out.rows[idx];
                out.cols[k] = out.cols[idx];
                out.vals[k] = out.vals[idx];
                k += 1;
            }
        }
        out.rows.truncate(k);
        out.cols.truncate(k);
        out.vals.truncate(k);
        Ok(out)
    }

    pub fn identity(n: usize) -> Self {
        SymTriplets {
            n,
            rows: (0..n as u32).collect(),
            cols: (0..n as u32).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.vals.len()).map(|k| (self.rows[k] as usize, self.cols[k] as usize, self.vals[k]))
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.vals {
            *v *= alpha;
        }
    }

    /// `out += alpha * M x`
    pub fn matvec_acc(&self, x: &DVector<f64>, alpha: f64, out: &mut DVector<f64>) {
        for k in 0..self.vals.len() {
            let (i, j) = (self.rows[k] as usize, self.cols[k] as usize);
            let v = alpha * self.vals[k];
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
    }

    /// `<M, X>` for dense symmetric `X`.
    pub fn inner_dense(&self, x: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for (i, j, v) in self.iter() {
            let w = if i == j { 1.0 } else { 2.0 };
            acc += w * v * x[(i, j)];
        }
        acc
    }

    /// `<M, V Vᵀ>` without forming the product.
    pub fn inner_factor(&self, factor: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for (i, j, v) in self.iter() {
            let rd = factor.row(i).dot(&factor.row(j));
            let w = if i == j { 1.0 } else { 2.0 };
            acc += w * v * rd;
        }
        acc
    }

    /// `xᵀ M x`
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for (i, j, v) in self.iter() {
            let w = if i == j { 1.0 } else { 2.0 };
            acc += w * v * x[i] * x[j];
        }
        acc
    }

    pub fn fro_norm_sq(&self) -> f64 {
        self.iter().map(|(i, j, v)| if i == j { v * v } else { 2.0 * v * v }).sum()
    }

    pub fn add_to_dense(&self, alpha: f64, out: &mut DMatrix<f64>) {
        for (i, j, v) in self.iter() {
            out[(i, j)] += alpha * v;
            if i != j {
                out[(j, i)] += alpha * v;
            }
        }
    }

    /// Re-indexes all entries by `offset` into a larger matrix of size `new_n`.
    pub fn embedded(&self, new_n: usize, offset: usize) -> SymTriplets {
        debug_assert!(self.n + offset <= new_n);
        SymTriplets {
            n: new_n,
            rows: self.rows.iter().map(|&r| r + offset as u32).collect(),
            cols: self.cols.iter().map(|&c| c + offset as u32).collect(),
            vals: self.vals.clone(),
        }
    }
}

/// `coeff * (l rᵀ + r lᵀ) / 2`; equals `coeff * l lᵀ` when `l == r`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterTerm {
    pub coeff: f64,
    pub left: DVector<f64>,
    pub right: DVector<f64>,
}

impl OuterTerm {
    pub fn symmetric(coeff: f64, s: DVector<f64>) -> Self {
        OuterTerm { coeff, left: s.clone(), right: s }
    }
}

/// Symmetric matrix `T + Σ ck (lk rkᵀ + rk lkᵀ)/2` with `T` sparse.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymMat {
    tri: SymTriplets,
    outers: Vec<OuterTerm>,
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        SymMat { tri: SymTriplets::zeros(n), outers: Vec::new() }
    }

    pub fn from_triplets(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        Ok(SymMat { tri: SymTriplets::from_entries(n, entries)?, outers: Vec::new() })
    }

    pub fn identity(n: usize) -> Self {
        SymMat { tri: SymTriplets::identity(n), outers: Vec::new() }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        SymMat::from_triplets(n, entries)
    }

    pub fn unit(n: usize, i: usize, j: usize, v: f64) -> Result<Self> {
        SymMat::from_triplets(n, [(i, j, v)])
    }

    pub fn push_outer(&mut self, term: OuterTerm) -> Result<()> {
        if term.left.len() != self.dim() || term.right.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: term.left.len().max(term.right.len()) });
        }
        if !term.coeff.is_finite()
            || term.left.iter().any(|v| !v.is_finite())
            || term.right.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite outer term".into()));
        }
        self.outers.push(term);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.tri.dim()
    }

    pub fn triplets(&self) -> &SymTriplets {
        &self.tri
    }

    pub fn outers(&self) -> &[OuterTerm] {
        &self.outers
    }

    pub fn nnz(&self) -> usize {
        self.tri.nnz() + self.outers.iter().map(|t| t.left.len() + t.right.len()).sum::<usize>()
    }

    pub fn is_zero(&self) -> bool {
        self.tri.nnz() == 0 && self.outers.iter().all(|t| t.coeff == 0.0)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tri.scale(alpha);
        for t in &mut self.outers {
            t.coeff *= alpha;
        }
    }

    /// `out += alpha * M x`
    pub fn matvec_acc(&self, x: &DVector<f64>, alpha: f64, out: &mut DVector<f64>) {
        self.tri.matvec_acc(x, alpha, out);
        for t in &self.outers {
            let c = 0.5 * alpha * t.coeff;
            let rx = t.right.dot(x);
            let lx = t.left.dot(x);
            out.axpy(c * rx, &t.left, 1.0);
            out.axpy(c * lx, &t.right, 1.0);
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.matvec_acc(x, 1.0, &mut out);
        out
    }

    pub fn inner_dense(&self, x: &DMatrix<f64>) -> f64 {
        let mut acc = self.tri.inner_dense(x);
        for t in &self.outers {
            // <sym(l rᵀ), X> = lᵀ X r for symmetric X
            acc += t.coeff * (x * &t.right).dot(&t.left);
        }
        acc
    }

    /// `<M, V Vᵀ>`
    pub fn inner_factor(&self, factor: &DMatrix<f64>) -> f64 {
        let mut acc = self.tri.inner_factor(factor);
        for t in &self.outers {
            let lv = factor.tr_mul(&t.left);
            let rv = factor.tr_mul(&t.right);
            acc += t.coeff * lv.dot(&rv);
        }
        acc
    }

    /// `xᵀ M x`
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let mut acc = self.tri.quad_form(x);
        for t in &self.outers {
            acc += t.coeff * t.left.dot(x) * t.right.dot(x);
        }
        acc
    }

    pub fn fro_norm_sq(&self) -> f64 {
        let mut acc = self.tri.fro_norm_sq();
        // Cross terms between the sparse part and each outer term.
        for t in &self.outers {
            let mut sr = DVector::zeros(self.dim());
            self.tri.matvec_acc(&t.right, 1.0, &mut sr);
            acc += 2.0 * t.coeff * t.left.dot(&sr);
        }
        // Outer-outer terms.
        for a in 0..self.outers.len() {
            for b in 0..self.outers.len() {
                let (ta, tb) = (&self.outers[a], &self.outers[b]);
                let ll = ta.left.dot(&tb.left);
                let rr = ta.right.dot(&tb.right);
                let lr = ta.left.dot(&tb.right);
                let rl = ta.right.dot(&tb.left);
                acc += 0.5 * ta.coeff * tb.coeff * (ll * rr + lr * rl);
            }
        }
        acc
    }

    pub fn fro_norm(&self) -> f64 {
        self.fro_norm_sq().max(0.0).sqrt()
    }

    pub fn add_to_dense(&self, alpha: f64, out: &mut DMatrix<f64>) {
        self.tri.add_to_dense(alpha, out);
        for t in &self.outers {
            let c = 0.5 * alpha * t.coeff;
            out.ger(c, &t.left, &t.right, 1.0);
            out.ger(c, &t.right, &t.left, 1.0);
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        self.add_to_dense(1.0, &mut out);
        out
    }

    /// Embeds into a `new_n`-dimensional matrix with indices shifted by `offset`.
    pub fn embedded(&self, new_n: usize, offset: usize) -> SymMat {
        let tri = self.tri.embedded(new_n, offset);
        let outers = self
            .outers
            .iter()
            .map(|t| {
                let mut left = DVector::zeros(new_n);
                let mut right = DVector::zeros(new_n);
                left.rows_mut(offset, self.dim()).copy_from(&t.left);
                right.rows_mut(offset, self.dim()).copy_from(&t.right);
                OuterTerm { coeff: t.coeff, left, right }
            })
            .collect();
        SymMat { tri, outers }
    }

    /// Max |M_ij| over stored data, used for scale-aware validation.
    pub fn max_abs(&self) -> f64 {
        let tri = self.tri.vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let out = self
            .outers
            .iter()
            .map(|t| t.coeff.abs() * t.left.amax() * t.right.amax())
            .fold(0.0f64, f64::max);
        tri.max(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> SymMat {
        let mut m = SymMat::from_triplets(4, [(0, 0, 2.0), (1, 0, -1.0), (3, 2, 0.5)]).unwrap();
        m.push_outer(OuterTerm {
            coeff: 0.7,
            left: DVector::from_vec(vec![1.0, 2.0, 0.0, -1.0]),
            right: DVector::from_vec(vec![0.0, 1.0, 1.0, 1.0]),
        })
        .unwrap();
        m
    }

    #[test]
    fn canonicalizes_duplicates_and_mirror_entries() {
        let t = SymTriplets::from_entries(3, [(0, 1, 1.0), (1, 0, 2.0), (2, 2, 0.5)]).unwrap();
        assert_eq!(t.nnz(), 2);
        let d = {
            let mut m = DMatrix::zeros(3, 3);
            t.add_to_dense(1.0, &mut m);
            m
        };
        assert_eq!(d[(0, 1)], 3.0);
        assert_eq!(d[(1, 0)], 3.0);
        assert_eq!(d[(2, 2)], 0.5);
    }

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        assert!(SymTriplets::from_entries(2, [(0, 2, 1.0)]).is_err());
        assert!(SymTriplets::from_entries(2, [(0, 1, f64::NAN)]).is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let m = example();
        let d = m.to_dense();
        let x = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
        let y = m.matvec(&x);
        assert!((&d * &x - &y).norm() < 1e-14);
        assert!((m.quad_form(&x) - x.dot(&(&d * &x))).abs() < 1e-12);
    }

    #[test]
    fn inner_products_match_dense() {
        let m = example();
        let d = m.to_dense();
        let v = DMatrix::from_fn(4, 2, |i, j| (i as f64 + 1.0) * 0.3 - j as f64);
        let x = &v * v.transpose();
        assert!((m.inner_dense(&x) - (d.component_mul(&x)).sum()).abs() < 1e-12);
        assert!((m.inner_factor(&v) - m.inner_dense(&x)).abs() < 1e-12);
    }

    #[test]
    fn fro_norm_exact_without_densifying() {
        let m = example();
        let d = m.to_dense();
        assert!((m.fro_norm() - d.norm()).abs() < 1e-12);
    }

    #[test]
    fn embedding_shifts_indices() {
        let m = example();
        let e = m.embedded(6, 1);
        let d = e.to_dense();
        let d0 = m.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d[(i + 1, j + 1)], d0[(i, j)]);
            }
        }
        assert_eq!(d.row(0).sum(), 0.0);
        assert_eq!(d.row(5).sum(), 0.0);
    }
}
