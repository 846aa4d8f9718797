//! Centered preconditioner for the Gauss-Newton normal equation.
//!
//! ```text
//! M[Z] = sum_i tr(A_i Z) A_i + [S, [S, Z]] + (Q P P^T Q^T) Z (Q P P^T Q^T) + t Z,   S = Q Lbar Q^T
//! ```
//!
//! In vectorized form `M = B + A A^T` where `B` is diagonal in the eigenbasis
//! of `Q`: `B = (Q x Q) diag(d) (Q x Q)^T` with
//! `d_ab = (lbar_a - lbar_b)^2 + p_a p_b + t` and `p_a = 1` for the free
//! (trailing) indices. The inverse comes from Sherman-Morrison-Woodbury:
//!
//! ```text
//! M^{-1} = B^{-1} - B^{-1} A (I_l + A^T B^{-1} A)^{-1} A^T B^{-1}
//! ```
//!
//! Kronecker products are never formed; `(Q x Q) vec(X) = vec(Q X Q^T)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::manifold::ManifoldPoint;
use crate::model::{add_scaled, symmetrize, AmbientSym, Linearization, ProblemData};
use crate::{Error, Result};

pub const DEFAULT_T_HAT: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct PrecondState {
    q_ref: DMatrix<f64>,
    lam_bar: DVector<f64>,
    m: usize,
    t_hat: f64,
    /// `d_ab`, the spectrum of `B` in the rotated basis.
    denom: DMatrix<f64>,
    /// `Q^T A_i Q`.
    rotated_basis: Vec<DMatrix<f64>>,
    /// Rotated `B^{-1} vec(A_i)`: `(Q^T A_i Q) ./ d`.
    scaled_basis: Vec<DMatrix<f64>>,
    /// `B^{-1} vec(A_i)` as ambient symmetric matrices.
    b_inv_basis: Vec<DMatrix<f64>>,
    /// Cholesky factor of `I_l + A^T B^{-1} A`; `None` when `l = 0`.
    smw_core: Option<Cholesky<f64, Dyn>>,
    /// The `A_i` themselves, for the forward application.
    basis: Vec<DMatrix<f64>>,
}

/// `d_ab = (lbar_a - lbar_b)^2 + p_a p_b + t_hat`.
pub fn denominators(lam_bar: &DVector<f64>, m: usize, t_hat: f64) -> DMatrix<f64> {
    let n = lam_bar.len();
    DMatrix::from_fn(n, n, |a, b| {
        let gap = lam_bar[a] - lam_bar[b];
        let pp = if a >= m && b >= m { 1.0 } else { 0.0 };
        gap * gap + pp + t_hat
    })
}

impl PrecondState {
    /// Builds the preconditioner at `x`.
    pub fn build(p: &ProblemData, x: &ManifoldPoint, t_hat: f64) -> Result<Self> {
        p.check_point(x)?;
        let qt = x.q.transpose();
        let rotated = p
            .parameter_basis()
            .iter()
            .map(|a| symmetrize(&qt * a * &x.q))
            .collect();
        Self::assemble(p, x.q.clone(), p.lam_bar(x), rotated, t_hat)
    }

    /// Builds from an existing linearization at the same point, reusing its
    /// rotated basis.
    pub fn from_linearization(
        p: &ProblemData,
        x: &ManifoldPoint,
        lin: &Linearization,
        t_hat: f64,
    ) -> Result<Self> {
        p.check_point(x)?;
        Self::assemble(
            p,
            x.q.clone(),
            lin.lam_bar.clone(),
            lin.rotated_basis.clone(),
            t_hat,
        )
    }

    fn assemble(
        p: &ProblemData,
        q: DMatrix<f64>,
        lam_bar: DVector<f64>,
        rotated_basis: Vec<DMatrix<f64>>,
        t_hat: f64,
    ) -> Result<Self> {
        if !(t_hat > 0.0 && t_hat.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "preconditioner shift must be positive, got {t_hat}"
            )));
        }
        let m = p.m();
        let denom = denominators(&lam_bar, m, t_hat);
        let scaled_basis: Vec<DMatrix<f64>> =
            rotated_basis.iter().map(|w| w.component_div(&denom)).collect();
        let b_inv_basis = scaled_basis
            .iter()
            .map(|s| symmetrize(&q * s * q.transpose()))
            .collect();
        let l = rotated_basis.len();
        let smw_core = if l == 0 {
            None
        } else {
            // tr(A_i^T Q S_j Q^T) = <W_i, S_j>
            let core = DMatrix::from_fn(l, l, |i, j| {
                let v = 0.5 * (rotated_basis[i].dot(&scaled_basis[j])
                    + rotated_basis[j].dot(&scaled_basis[i]));
                if i == j {
                    1.0 + v
                } else {
                    v
                }
            });
            Some(Cholesky::new(core).ok_or_else(|| {
                Error::NumericFailure("SMW core matrix is not positive definite".into())
            })?)
        };
        Ok(PrecondState {
            q_ref: q,
            lam_bar,
            m,
            t_hat,
            denom,
            rotated_basis,
            scaled_basis,
            b_inv_basis,
            smw_core,
            basis: p.parameter_basis().to_vec(),
        })
    }

    pub fn t_hat(&self) -> f64 {
        self.t_hat
    }

    pub fn denom(&self) -> &DMatrix<f64> {
        &self.denom
    }

    /// `B^{-1} vec(A_i)` for each `i`, reshaped to `n x n`.
    pub fn b_inv_basis(&self) -> &[DMatrix<f64>] {
        &self.b_inv_basis
    }

    pub fn smw_core(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.smw_core.as_ref()
    }

    fn check(&self, z: &AmbientSym) -> Result<()> {
        if z.n() != self.q_ref.nrows() {
            return Err(Error::dims("preconditioner operand", self.q_ref.nrows(), z.n()));
        }
        Ok(())
    }

    /// `M[z]`, evaluated from the commutator definition.
    pub fn apply(&self, z: &AmbientSym) -> Result<AmbientSym> {
        self.check(z)?;
        let q = &self.q_ref;
        let zm = z.as_matrix();
        let mut out = zm * self.t_hat;
        for a in &self.basis {
            add_scaled(&mut out, a.dot(zm), a);
        }
        let s = crate::model::conjugate_diag(q, &self.lam_bar);
        let inner = &s * zm - zm * &s;
        out += &s * &inner - &inner * &s;
        let n = q.nrows();
        if self.m < n {
            let qp = q.columns(self.m, n - self.m);
            let proj = &qp * qp.transpose();
            out += &proj * zm * &proj;
        }
        Ok(AmbientSym::from_matrix(out))
    }

    /// `M^{-1}[z]`.
    pub fn apply_inverse(&self, z: &AmbientSym) -> Result<AmbientSym> {
        self.check(z)?;
        let q = &self.q_ref;
        let w = q.transpose() * z.as_matrix() * q;
        let y = self.apply_inverse_rotated(&w);
        Ok(AmbientSym::from_matrix(q * y * q.transpose()))
    }

    /// `M` in the rotated basis: takes `Q^T Z Q`, returns `Q^T M[Z] Q`.
    pub fn apply_rotated(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = y.component_mul(&self.denom);
        for w in &self.rotated_basis {
            add_scaled(&mut out, w.dot(y), w);
        }
        out
    }

    /// `M^{-1}` in the rotated basis: takes `Q^T Z Q`, returns `Q^T M^{-1}[Z] Q`.
    /// One step of iterative refinement follows the SMW solve when `l > 0`.
    pub fn apply_inverse_rotated(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = self.smw_solve(w);
        if self.smw_core.is_none() {
            return y;
        }
        let r = w - self.apply_rotated(&y);
        y += self.smw_solve(&r);
        y
    }

    fn smw_solve(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = w.component_div(&self.denom);
        if let Some(core) = &self.smw_core {
            let proj = DVector::from_iterator(
                self.rotated_basis.len(),
                self.rotated_basis.iter().map(|b| b.dot(&y)),
            );
            let coef = core.solve(&proj);
            for (c, s) in coef.iter().zip(&self.scaled_basis) {
                add_scaled(&mut y, -c, s);
            }
        }
        y
    }

    /// `B^{-1}[z]` alone, without the low-rank correction.
    pub fn apply_b_inverse(&self, z: &AmbientSym) -> Result<AmbientSym> {
        self.check(z)?;
        let q = &self.q_ref;
        let w = q.transpose() * z.as_matrix() * q;
        Ok(AmbientSym::from_matrix(q * w.component_div(&self.denom) * q.transpose()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::testing::*;
    use crate::model::testing::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec_col(m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_column_slice(m.as_slice())
    }

    /// Dense `B + A A^T` with explicit Kronecker products.
    fn dense_preconditioner(p: &ProblemData, x: &ManifoldPoint, t_hat: f64) -> DMatrix<f64> {
        let n = p.n();
        let m = p.m();
        let lbar = DMatrix::from_diagonal(&p.lam_bar(x));
        let id = DMatrix::<f64>::identity(n, n);
        let gap = id.kronecker(&lbar) - lbar.kronecker(&id);
        let mut pp = DMatrix::<f64>::zeros(n, n);
        for i in m..n {
            pp[(i, i)] = 1.0;
        }
        let core = &gap * &gap + pp.kronecker(&pp) + DMatrix::identity(n * n, n * n) * t_hat;
        let qq = x.q.kronecker(&x.q);
        let mut out = &qq * core * qq.transpose();
        for a in p.parameter_basis() {
            let v = vec_col(a);
            out += &v * v.transpose();
        }
        out
    }

    #[test]
    fn denominators_small_case() {
        let d = denominators(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]), 2, 1e-5);
        assert_eq!(d[(0, 0)], 1e-5);
        assert_eq!(d[(0, 2)], 1.0 + 1e-5);
        assert_eq!(d[(2, 3)], 1.0 + 1e-5);
        assert_eq!(d[(2, 2)], 1.0 + 1e-5);
    }

    #[test]
    fn zero_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = random_problem(&mut rng, 5, 2, 3);
        let x = random_point(&mut rng, 2, 5, 2);
        let s = PrecondState::build(&p, &x, DEFAULT_T_HAT).unwrap();
        assert_eq!(s.apply(&AmbientSym::zeros(5)).unwrap().norm(), 0.0);
        assert_eq!(s.apply_inverse(&AmbientSym::zeros(5)).unwrap().norm(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = random_problem(&mut rng, 4, 1, 2);
        let x = random_point(&mut rng, 1, 4, 2);
        assert!(PrecondState::build(&p, &x, 0.0).is_err());
        assert!(PrecondState::build(&p, &x, -1.0).is_err());
    }

    #[test]
    fn no_parameters_reduces_to_b_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let p = random_problem(&mut rng, 5, 0, 3);
        let x = random_point(&mut rng, 0, 5, 2);
        let s = PrecondState::build(&p, &x, 1e-3).unwrap();
        assert!(s.smw_core().is_none());
        let z = AmbientSym::from_matrix(random_sym(&mut rng, 5));
        assert_eq!(s.apply_inverse(&z).unwrap(), s.apply_b_inverse(&z).unwrap());
    }

    #[test]
    fn round_trip_both_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let (n, l, m) = (10, 6, 5);
        let p = random_problem(&mut rng, n, l, m);
        let x = random_point(&mut rng, l, n, n - m);
        let s = PrecondState::build(&p, &x, DEFAULT_T_HAT).unwrap();
        for _ in 0..10 {
            let z = AmbientSym::from_matrix(random_sym(&mut rng, n));
            let a = s.apply(&s.apply_inverse(&z).unwrap()).unwrap();
            assert!((a.as_matrix() - z.as_matrix()).norm() <= 1e-10 * z.norm());
            let b = s.apply_inverse(&s.apply(&z).unwrap()).unwrap();
            assert!((b.as_matrix() - z.as_matrix()).norm() <= 1e-10 * z.norm());
        }
    }

    #[test]
    fn matches_dense_kronecker_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (n, l, m) = (6, 2, 4);
        let p = random_problem(&mut rng, n, l, m);
        let x = random_point(&mut rng, l, n, n - m);
        let s = PrecondState::build(&p, &x, DEFAULT_T_HAT).unwrap();
        let dense = dense_preconditioner(&p, &x, DEFAULT_T_HAT);
        let dense_inv = dense.clone().try_inverse().unwrap();
        for _ in 0..20 {
            let z = AmbientSym::from_matrix(random_sym(&mut rng, n));
            let fwd = vec_col(s.apply(&z).unwrap().as_matrix());
            let want = &dense * vec_col(z.as_matrix());
            assert!((fwd - &want).norm() <= 1e-11 * want.norm().max(1.0));
            let inv = vec_col(s.apply_inverse(&z).unwrap().as_matrix());
            let want = &dense_inv * vec_col(z.as_matrix());
            assert!((inv - &want).norm() <= 1e-10 * want.norm().max(1.0));
        }
    }

    #[test]
    fn positive_definite_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let (n, l, m) = (7, 3, 5);
        let p = random_problem(&mut rng, n, l, m);
        let x = random_point(&mut rng, l, n, n - m);
        let s = PrecondState::build(&p, &x, DEFAULT_T_HAT).unwrap();
        for _ in 0..50 {
            let z = AmbientSym::from_matrix(random_sym(&mut rng, n));
            let w = AmbientSym::from_matrix(random_sym(&mut rng, n));
            let mz = s.apply(&z).unwrap();
            assert!(mz.dot(&z) >= DEFAULT_T_HAT * z.dot(&z) * (1.0 - 1e-12));
            let a = mz.dot(&w);
            let b = z.dot(&s.apply(&w).unwrap());
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            let mi = s.apply_inverse(&z).unwrap().into_inner();
            assert!((&mi - mi.transpose()).norm() <= 1e-13 * mi.norm());
        }
    }

    #[test]
    fn stored_b_inverse_basis_matches_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (n, l, m) = (5, 3, 3);
        let p = random_problem(&mut rng, n, l, m);
        let x = random_point(&mut rng, l, n, n - m);
        let s = PrecondState::build(&p, &x, DEFAULT_T_HAT).unwrap();
        for (i, stored) in s.b_inv_basis().iter().enumerate() {
            let a = AmbientSym::from_matrix(p.basis_matrix(i + 1).clone());
            let direct = s.apply_b_inverse(&a).unwrap();
            assert!((direct.as_matrix() - stored).norm() <= 1e-12 * stored.norm());
        }
    }

    #[test]
    fn linearization_build_matches_direct_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let (n, l, m) = (6, 3, 4);
        let p = random_problem(&mut rng, n, l, m);
        let x = random_point(&mut rng, l, n, n - m);
        let lin = Linearization::new(&p, &x).unwrap();
        let a = PrecondState::build(&p, &x, DEFAULT_T_HAT).unwrap();
        let b = PrecondState::from_linearization(&p, &x, &lin, DEFAULT_T_HAT).unwrap();
        let z = AmbientSym::from_matrix(random_sym(&mut rng, n));
        let da = a.apply_inverse(&z).unwrap();
        let db = b.apply_inverse(&z).unwrap();
        assert!((da.as_matrix() - db.as_matrix()).norm() <= 1e-12 * da.norm());
    }
}
