//! Matrix-free conjugate gradient and BiCGStab for the Newton linear
//! systems. CG serves the symmetric positive semidefinite Jacobians of
//! equality-only problems; BiCGStab serves the nonsymmetric Jacobians that
//! appear once inequality constraints are present.

use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct KrylovOutcome {
    pub x: DVector<f64>,
    pub iters: usize,
    /// `‖b − Ax‖ / ‖b‖`
    pub rel_residual: f64,
    pub breakdown: bool,
}

/// Conjugate gradient on a symmetric positive (semi)definite operator.
pub fn cg<F>(apply: F, b: &DVector<f64>, tol_rel: f64, max_iters: usize) -> KrylovOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return KrylovOutcome { x: DVector::zeros(n), iters: 0, rel_residual: 0.0, breakdown: false };
    }
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    for it in 0..max_iters {
        if rs.sqrt() <= tol_rel * bnorm {
            return KrylovOutcome { x, iters: it, rel_residual: rs.sqrt() / bnorm, breakdown: false };
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Curvature lost (semidefinite direction): return the best iterate.
            return KrylovOutcome { x, iters: it, rel_residual: rs.sqrt() / bnorm, breakdown: true };
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rs_new = r.norm_squared();
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    KrylovOutcome { x, iters: max_iters, rel_residual: rs.sqrt() / bnorm, breakdown: false }
}

/// BiCGStab for general (nonsymmetric) operators.
pub fn bicgstab<F>(apply: F, b: &DVector<f64>, tol_rel: f64, max_iters: usize) -> KrylovOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return KrylovOutcome { x: DVector::zeros(n), iters: 0, rel_residual: 0.0, breakdown: false };
    }
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let r_hat = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = DVector::zeros(n);
    let mut p = DVector::zeros(n);
    for it in 0..max_iters {
        let rnorm = r.norm();
        if rnorm <= tol_rel * bnorm {
            return KrylovOutcome { x, iters: it, rel_residual: rnorm / bnorm, breakdown: false };
        }
        let rho_new = r_hat.dot(&r);
        if rho_new.abs() < 1e-300 || omega.abs() < 1e-300 {
            return KrylovOutcome { x, iters: it, rel_residual: rnorm / bnorm, breakdown: true };
        }
        let beta = (rho_new / rho) * (alpha / omega);
        p = &r + (&p - &v * omega) * beta;
        v = apply(&p);
        let denom = r_hat.dot(&v);
        if denom.abs() < 1e-300 {
            return KrylovOutcome { x, iters: it, rel_residual: rnorm / bnorm, breakdown: true };
        }
        alpha = rho_new / denom;
        let s = &r - &v * alpha;
        if s.norm() <= tol_rel * bnorm {
            x.axpy(alpha, &p, 1.0);
            let res = (b - apply(&x)).norm();
            return KrylovOutcome { x, iters: it + 1, rel_residual: res / bnorm, breakdown: false };
        }
        let t = apply(&s);
        let tt = t.norm_squared();
        if tt < 1e-300 {
            return KrylovOutcome { x, iters: it, rel_residual: rnorm / bnorm, breakdown: true };
        }
        omega = t.dot(&s) / tt;
        x.axpy(alpha, &p, 1.0);
        x.axpy(omega, &s, 1.0);
        r = &s - &t * omega;
        rho = rho_new;
    }
    let res = (b - apply(&x)).norm();
    KrylovOutcome { x, iters: max_iters, rel_residual: res / bnorm, breakdown: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cg_solves_spd_system() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = DMatrix::from_fn(12, 12, |_, _| rng.random::<f64>() - 0.5);
        let a = &g * g.transpose() + DMatrix::identity(12, 12);
        let b = DVector::from_fn(12, |_, _| rng.random::<f64>() - 0.5);
        let out = cg(|v| &a * v, &b, 1e-12, 200);
        assert!(!out.breakdown);
        assert!((&a * &out.x - &b).norm() < 1e-9);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut a = DMatrix::from_fn(10, 10, |_, _| 0.3 * (rng.random::<f64>() - 0.5));
        for i in 0..10 {
            a[(i, i)] += 2.0;
        }
        let b = DVector::from_fn(10, |_, _| rng.random::<f64>() - 0.5);
        let out = bicgstab(|v| &a * v, &b, 1e-12, 400);
        assert!(!out.breakdown);
        assert!((&a * &out.x - &b).norm() < 1e-8);
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let out = cg(|v: &DVector<f64>| v.clone(), &DVector::zeros(4), 1e-10, 10);
        assert_eq!(out.iters, 0);
        assert_eq!(out.x.norm(), 0.0);
    }
}
