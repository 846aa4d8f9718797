//! The residual map `H(c, Q, Lambda) = A(c) - Q Lbar Q^T`, the cost
//! `h = ||H||_F^2 / 2`, the differential `DH`, its adjoint and the Riemannian
//! gradient `grad h = DH^*[H]`.
//!
//! `Lbar = blkdiag(Lambda*_m, Lambda)` is kept as a length-`n` vector. With
//! `K = Q^T (.) Q` denoting rotation into the eigenbasis of the current point,
//!
//! ```text
//! DH[dc, Omega, dlambda] = sum_i dc_i A_i + Q (Lbar Omega - Omega Lbar - P diag(dlambda) P^T) Q^T
//! DH^*[Z] = (tr(A_i Z))_i, Lbar W - W Lbar, -diag(W)_{m..n}      with W = Q^T Z Q
//! ```
//!
//! which are the commutator formulas `[Q Lbar Q^T, Q Omega Q^T]` and
//! `Q^T [Q Lbar Q^T, Z] Q` written in rotated coordinates.

use nalgebra::{DMatrix, DVector};

use crate::manifold::{skew_dim, skew_index, ManifoldPoint, TangentVector};
use crate::{Error, Result};

/// `y += alpha * x` for matrices of equal shape.
pub(crate) fn add_scaled(y: &mut DMatrix<f64>, alpha: f64, x: &DMatrix<f64>) {
    y.zip_apply(x, |a, b| *a += alpha * b);
}

/// A symmetric `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientSym(DMatrix<f64>);

impl AmbientSym {
    /// Wraps `mat` after replacing it by its symmetric part.
    pub fn from_matrix(mat: DMatrix<f64>) -> Self {
        AmbientSym(symmetrize(mat))
    }

    /// Wraps `mat` unchanged; the caller guarantees symmetry.
    pub(crate) fn from_symmetric(mat: DMatrix<f64>) -> Self {
        debug_assert!(
            (&mat - mat.transpose()).norm() <= 1e-12 * mat.norm().max(1.0),
            "AmbientSym built from non-symmetric matrix"
        );
        AmbientSym(mat)
    }

    pub fn zeros(n: usize) -> Self {
        AmbientSym(DMatrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &AmbientSym) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    m
}

/// An LSIEP instance: basis `A_0, ..., A_l` and sorted target eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    basis: Vec<DMatrix<f64>>,
    target_eigs: DVector<f64>,
    n: usize,
}

impl ProblemData {
    /// Validates and symmetrizes the basis. `basis[0]` is `A_0`.
    pub fn new(basis: Vec<DMatrix<f64>>, target_eigs: DVector<f64>) -> Result<Self> {
        let first = basis
            .first()
            .ok_or_else(|| Error::InvalidProblem("basis must contain at least A_0".into()))?;
        let n = first.nrows();
        if n == 0 {
            return Err(Error::InvalidProblem("matrices must be at least 1x1".into()));
        }
        for (i, a) in basis.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::InvalidProblem(format!(
                    "basis matrix {i} is {}x{}, expected {n}x{n}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProblem(format!("basis matrix {i} is not finite")));
            }
        }
        if target_eigs.len() > n {
            return Err(Error::InvalidProblem(format!(
                "{} target eigenvalues exceed n = {n}",
                target_eigs.len()
            )));
        }
        if target_eigs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("target eigenvalues must be finite".into()));
        }
        if target_eigs.as_slice().windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidProblem(
                "target eigenvalues must be nondecreasing".into(),
            ));
        }
        Ok(ProblemData {
            basis: basis.into_iter().map(symmetrize).collect(),
            target_eigs,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of free parameters `l`.
    pub fn l(&self) -> usize {
        self.basis.len() - 1
    }

    /// Number of prescribed eigenvalues `m`.
    pub fn m(&self) -> usize {
        self.target_eigs.len()
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.basis[0]
    }

    /// `A_i` for `i` in `1..=l`; `basis_matrix(0)` is `A_0`.
    pub fn basis_matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.basis[i]
    }

    /// `A_1, ..., A_l`.
    pub fn parameter_basis(&self) -> &[DMatrix<f64>] {
        &self.basis[1..]
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    pub fn target_eigs(&self) -> &DVector<f64> {
        &self.target_eigs
    }

    pub fn check_point(&self, x: &ManifoldPoint) -> Result<()> {
        if x.n() != self.n {
            return Err(Error::dims("point order n", self.n, x.n()));
        }
        if x.l() != self.l() {
            return Err(Error::dims("point parameter count l", self.l(), x.l()));
        }
        if x.n_free() != self.n - self.m() {
            return Err(Error::dims("point free eigenvalues n-m", self.n - self.m(), x.n_free()));
        }
        Ok(())
    }

    pub(crate) fn check_tangent(&self, u: &TangentVector) -> Result<()> {
        if u.dc.len() != self.l() {
            return Err(Error::dims("tangent dc", self.l(), u.dc.len()));
        }
        if u.order() != self.n {
            return Err(Error::dims("tangent omega order", self.n, u.order()));
        }
        if u.dlambda.len() != self.n - self.m() {
            return Err(Error::dims("tangent dlambda", self.n - self.m(), u.dlambda.len()));
        }
        Ok(())
    }

    fn check_sym(&self, z: &AmbientSym) -> Result<()> {
        if z.n() != self.n {
            return Err(Error::dims("symmetric operand order", self.n, z.n()));
        }
        Ok(())
    }

    /// `blkdiag(Lambda*_m, Lambda)` as a vector.
    pub fn lam_bar(&self, x: &ManifoldPoint) -> DVector<f64> {
        let m = self.m();
        DVector::from_fn(self.n, |i, _| {
            if i < m {
                self.target_eigs[i]
            } else {
                x.lambda[i - m]
            }
        })
    }

        /// `sum_i c_i A_i` over `i >= 1`, without `A_0`.
    pub(crate) fn combine(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (ci, a) in c.iter().zip(self.parameter_basis()) {
            if *ci != 0.0 {
                add_scaled(&mut out, *ci, a);
            }
        }
        out
    }

    /// `v(Z) = (tr(A_i^T Z))_{i=1..l}`.
    pub fn v(&self, z: &AmbientSym) -> DVector<f64> {
        DVector::from_iterator(self.l(), self.parameter_basis().iter().map(|a| a.dot(z.as_matrix())))
    }
}

/// `Q diag(d) Q^T`.
pub(crate) fn conjugate_diag(q: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut qd = q.clone();
    for (j, mut col) in qd.column_iter_mut().enumerate() {
        col *= d[j];
    }
    symmetrize(qd * q.transpose())
}

/// `A(c) = A_0 + sum_i c_i A_i`.
pub fn a_of_c(p: &ProblemData, c: &DVector<f64>) -> Result<AmbientSym> {
    if c.len() != p.l() {
        return Err(Error::dims("parameter vector c", p.l(), c.len()));
    }
    Ok(AmbientSym::from_symmetric(p.a0() + p.combine(c)))
}

/// `H(x) = A(c) - Q Lbar Q^T`.
pub fn residual(p: &ProblemData, x: &ManifoldPoint) -> Result<AmbientSym> {
    p.check_point(x)?;
    let a = a_of_c(p, &x.c)?.into_inner();
    Ok(AmbientSym::from_symmetric(a - conjugate_diag(&x.q, &p.lam_bar(x))))
}

/// `h(x) = ||H(x)||_F^2 / 2`.
pub fn cost(p: &ProblemData, x: &ManifoldPoint) -> Result<f64> {
    Ok(0.5 * residual(p, x)?.as_matrix().norm_squared())
}

/// `Lbar Omega - Omega Lbar - P diag(dlambda) P^T`: the rotated `Q`/`Lambda`
/// part of `DH[u]`.
pub(crate) fn rotated_direction(lam_bar: &DVector<f64>, m: usize, u: &TangentVector) -> DMatrix<f64> {
    let n = lam_bar.len();
    let mut k = DMatrix::zeros(n, n);
    let upper = u.omega_upper();
    for j in 1..n {
        for i in 0..j {
            let v = (lam_bar[i] - lam_bar[j]) * upper[skew_index(i, j)];
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    for (j, dl) in u.dlambda.iter().enumerate() {
        k[(m + j, m + j)] = -dl;
    }
    k
}

/// Tangent `(Omega, dlambda)` parts of the adjoint from a rotated symmetric `W`.
pub(crate) fn rotated_adjoint_parts(
    lam_bar: &DVector<f64>,
    m: usize,
    w: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = lam_bar.len();
    let mut upper = DVector::zeros(skew_dim(n));
    for j in 1..n {
        for i in 0..j {
            // skew part of (Lbar W - W Lbar); W is symmetric up to rounding
            let wij = 0.5 * (w[(i, j)] + w[(j, i)]);
            upper[skew_index(i, j)] = (lam_bar[i] - lam_bar[j]) * wij;
        }
    }
    let dlambda = DVector::from_fn(n - m, |j, _| -w[(m + j, m + j)]);
    (upper, dlambda)
}

/// `DH(x)[u]`.
pub fn diff(p: &ProblemData, x: &ManifoldPoint, u: &TangentVector) -> Result<AmbientSym> {
    p.check_point(x)?;
    p.check_tangent(u)?;
    let k = rotated_direction(&p.lam_bar(x), p.m(), u);
    let rotated_back = symmetrize(&x.q * k * x.q.transpose());
    Ok(AmbientSym::from_symmetric(p.combine(&u.dc) + rotated_back))
}

/// `(DH(x))^*[z]`.
pub fn adjoint(p: &ProblemData, x: &ManifoldPoint, z: &AmbientSym) -> Result<TangentVector> {
    p.check_point(x)?;
    p.check_sym(z)?;
    let w = x.q.transpose() * z.as_matrix() * &x.q;
    let (upper, dlambda) = rotated_adjoint_parts(&p.lam_bar(x), p.m(), &w);
    TangentVector::from_parts(p.v(z), p.n(), upper, dlambda)
}

/// `grad h(x) = DH(x)^*[H(x)]`.
pub fn gradient(p: &ProblemData, x: &ManifoldPoint) -> Result<TangentVector> {
    adjoint(p, x, &residual(p, x)?)
}

/// Gauss-Newton operator `DH^* o DH`.
pub fn gn_operator(p: &ProblemData, x: &ManifoldPoint, u: &TangentVector) -> Result<TangentVector> {
    adjoint(p, x, &diff(p, x, u)?)
}

/// Everything the inner solves need at a fixed outer iterate.
///
/// The basis is rotated once into the eigenbasis of `Q`, after which `DH`,
/// its adjoint and the Gauss-Newton operator cost `O(l n^2)` per application
/// with no matrix products.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub(crate) lam_bar: DVector<f64>,
    pub(crate) m: usize,
    pub(crate) n: usize,
    /// `Q^T A_i Q` for `i = 1..=l`.
    pub(crate) rotated_basis: Vec<DMatrix<f64>>,
    /// `Q^T H Q`.
    pub(crate) rotated_residual: DMatrix<f64>,
    residual_norm: f64,
    gradient: TangentVector,
}

impl Linearization {
    pub fn new(p: &ProblemData, x: &ManifoldPoint) -> Result<Self> {
        p.check_point(x)?;
        let qt = x.q.transpose();
        let rotate = |a: &DMatrix<f64>| symmetrize(&qt * a * &x.q);
        let rotated_basis: Vec<_> = p.parameter_basis().iter().map(rotate).collect();
        let h = residual(p, x)?;
        let rotated_residual = rotate(h.as_matrix());
        let lam_bar = p.lam_bar(x);
        let (upper, dlambda) = rotated_adjoint_parts(&lam_bar, p.m(), &rotated_residual);
        let gradient = TangentVector::from_parts(p.v(&h), p.n(), upper, dlambda)?;
        Ok(Linearization {
            lam_bar,
            m: p.m(),
            n: p.n(),
            rotated_basis,
            rotated_residual,
            residual_norm: h.norm(),
            gradient,
        })
    }

    pub fn gradient(&self) -> &TangentVector {
        &self.gradient
    }

    /// `||H(x)||_F`.
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn cost(&self) -> f64 {
        0.5 * self.residual_norm * self.residual_norm
    }

    /// `Q^T DH[u] Q`.
    pub fn diff_rotated(&self, u: &TangentVector) -> DMatrix<f64> {
        let mut k = rotated_direction(&self.lam_bar, self.m, u);
        for (ci, w) in u.dc.iter().zip(&self.rotated_basis) {
            if *ci != 0.0 {
                add_scaled(&mut k, *ci, w);
            }
        }
        k
    }

    /// `DH^*[Q W Q^T]` for a rotated symmetric `W`.
    pub fn adjoint_rotated(&self, w: &DMatrix<f64>) -> TangentVector {
        let dc = DVector::from_iterator(
            self.rotated_basis.len(),
            self.rotated_basis.iter().map(|b| b.dot(w)),
        );
        let (upper, dlambda) = rotated_adjoint_parts(&self.lam_bar, self.m, w);
        TangentVector::from_parts(dc, self.n, upper, dlambda).expect("sizes fixed at construction")
    }

    /// `DH^* o DH [u]`.
    pub fn gn_apply(&self, u: &TangentVector) -> TangentVector {
        self.adjoint_rotated(&self.diff_rotated(u))
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::manifold::testing::*;
    use rand::Rng;

    pub fn random_sym<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
        let b = random_matrix(rng, n, n);
        (&b + b.transpose()) * 0.5
    }

    pub fn random_problem<R: Rng>(rng: &mut R, n: usize, l: usize, m: usize) -> ProblemData {
        let basis = (0..=l).map(|_| random_sym(rng, n)).collect();
        let mut t: Vec<f64> = random_vector(rng, m).iter().copied().collect();
        t.sort_by(f64::total_cmp);
        ProblemData::new(basis, DVector::from_vec(t)).unwrap()
    }
}
